"""Unsupervised outlier detector zoo with a uniform fit/score interface."""

from tda.zoo import detectors  # noqa: F401  (registers the algorithms)
from tda.zoo.base import (
    ALGORITHMS,
    BaseDetector,
    DetectorSpec,
    default_grid,
    fit,
    n_flagged,
    score,
    threshold_labels,
)

__all__ = [
    "ALGORITHMS",
    "BaseDetector",
    "DetectorSpec",
    "default_grid",
    "fit",
    "n_flagged",
    "score",
    "threshold_labels",
]

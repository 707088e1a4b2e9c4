"""Detector specs, the algorithm registry and score thresholding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tda.dataset import as_matrix
from tda.errors import ValidationError

ALGORITHMS = ("HBOS", "KNN", "LOF", "IFOREST", "PCA_OD", "AE_OD", "CBLOF")

_REGISTRY = {}


def register(name):
    def wrap(cls):
        cls.algorithm = name
        _REGISTRY[name] = cls
        return cls
    return wrap


def detector_class(algorithm):
    try:
        return _REGISTRY[algorithm]
    except KeyError:
        raise ValidationError(
            f"unknown algorithm {algorithm!r}; known: {', '.join(sorted(_REGISTRY))}"
        ) from None


@dataclass(frozen=True)
class DetectorSpec:
    """Algorithm name plus hyperparameters and seed.

    Hyperparameters omitted from ``hyperparams`` take the algorithm's
    documented defaults.
    """

    algorithm: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        cls = detector_class(self.algorithm)
        object.__setattr__(self, "hyperparams", cls.validate(dict(self.hyperparams)))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self):
        return {"algorithm": self.algorithm, "hyperparams": dict(self.hyperparams), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["algorithm"], dict(d.get("hyperparams") or {}), int(d.get("seed", 0)))

    def with_seed(self, seed):
        return DetectorSpec(self.algorithm, dict(self.hyperparams), seed)

    def label(self):
        params = ",".join(f"{k}={v}" for k, v in sorted(self.hyperparams.items()))
        return f"{self.algorithm}({params})"


class BaseDetector:
    """Subclasses declare ``params`` (name -> (default, checker)) and
    implement ``_fit`` and ``_score``. Scores are oriented so that larger
    means more outlying."""

    algorithm = None
    params = {}

    @classmethod
    def validate(cls, hyperparams):
        unknown = set(hyperparams) - set(cls.params)
        if unknown:
            raise ValidationError(f"{cls.algorithm}: unknown hyperparameters {sorted(unknown)}")
        out = {}
        for name, (_, check) in cls.params.items():
            if name in hyperparams and hyperparams[name] is not None:
                value = hyperparams[name]
                try:
                    ok = check(value)
                except (TypeError, ValueError):
                    ok = False
                if not ok:
                    raise ValidationError(f"{cls.algorithm}: invalid {name}={value!r}")
                out[name] = value
        return out

    def __init__(self, spec: DetectorSpec):
        self.spec = spec
        self.hp = {name: default for name, (default, _) in self.params.items()}
        self.hp.update(spec.hyperparams)
        self.train_dims = None

    def fit(self, X):
        X = as_matrix(X)
        self.train_dims = X.shape[1]
        self._fit(X)
        return self

    def score(self, X):
        X = as_matrix(X)
        if self.train_dims is None:
            raise ValidationError(f"{self.algorithm}: detector is not fitted")
        if X.shape[1] != self.train_dims:
            raise ValidationError(
                f"{self.algorithm}: fitted on {self.train_dims} features, got {X.shape[1]}"
            )
        scores = np.asarray(self._score(X), dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValidationError(f"{self.algorithm}: produced non-finite scores")
        return scores

    def _fit(self, X):
        raise NotImplementedError

    def _score(self, X):
        raise NotImplementedError


def positive_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1


def positive_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def unit_interval(v):
    return isinstance(v, (int, float)) and 0 < v < 1


def boolean(v):
    return isinstance(v, bool)


def all_rows_identical(X):
    return bool(np.all(X == X[0]))


def fit(spec: DetectorSpec, X) -> BaseDetector:
    return detector_class(spec.algorithm)(spec).fit(X)


def score(det: BaseDetector, X) -> np.ndarray:
    return det.score(X)


def n_flagged(contamination, n):
    # the epsilon keeps ceil(k/n * n) at k despite rounding in the product
    return min(n, max(0, math.ceil(contamination * n - 1e-9)))


def threshold_labels(scores, contamination: float) -> np.ndarray:
    """Flag the ``ceil(contamination * n)`` highest scores as outliers.

    Ties at the cut go to the lower sample index.
    """
    if not 0 < contamination < 1:
        raise ValidationError(f"contamination must lie in (0, 1), got {contamination}")
    s = np.asarray(scores, dtype=np.float64)
    k = n_flagged(contamination, s.size)
    order = np.lexsort((np.arange(s.size), -s))
    labels = np.zeros(s.size, dtype=np.int64)
    labels[order[:k]] = 1
    return labels


_GRIDS = {
    "KNN": ("n_neighbors", [3, 5, 10, 20, 50]),
    "IFOREST": ("n_estimators", [50, 100, 200]),
    "LOF": ("n_neighbors", [10, 20, 50]),
    "HBOS": ("n_bins", [5, 10, 20, 50]),
    "PCA_OD": ("n_components", [2, 5, 10, 20]),
    "CBLOF": ("n_clusters", [4, 8, 16]),
    "AE_OD": ("epochs", [50, 100]),
}


def default_grid(algorithm: str, seed: int = 0) -> list:
    """Hyperparameter grid for ``algorithm``; the first entry is the default."""
    detector_class(algorithm)
    name, values = _GRIDS[algorithm]
    return [DetectorSpec(algorithm, {name: v}, seed) for v in values]

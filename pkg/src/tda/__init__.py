"""Tabular Data Adapters: soft outlier labels for unlabeled private tables.

A private dataset is matched against an index of labeled public datasets by
comparing PCA reconstruction-error curves, translated into the closest public
feature space with a shared-bottleneck autoencoder, and labeled by the public
dataset's best detectors.
"""

from tda.dataset import Normalizer, TabularDataset, load_csv
from tda.errors import (
    DivergenceError,
    ExhaustionError,
    TdaError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "ExhaustionError",
    "Normalizer",
    "TabularDataset",
    "TdaError",
    "ValidationError",
    "load_csv",
]

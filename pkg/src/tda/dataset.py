"""Tabular datasets: CSV loading, z-score normalization and minibatching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from tda.errors import ValidationError


@dataclass(frozen=True)
class TabularDataset:
    """Numeric sample matrix with optional 0/1 outlier labels.

    Parameters
    ----------
    name : str
        Dataset identifier.
    X : np.ndarray of shape (n_samples, n_features)
        Finite real values.
    labels : np.ndarray of shape (n_samples,), optional
        Ground truth, 0 = inlier and 1 = outlier.
    feature_names : list of str, optional
    """

    name: str
    X: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[list] = field(default=None)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError(f"{self.name}: X must be 2-dimensional, got shape {X.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValidationError(f"{self.name}: need at least one sample and one feature, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValidationError(f"{self.name}: X contains non-finite values")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],):
                raise ValidationError(
                    f"{self.name}: labels have shape {y.shape}, expected ({X.shape[0]},)"
                )
            if not np.all((y == 0) | (y == 1)):
                raise ValidationError(f"{self.name}: labels must be 0 or 1")
            y = y.astype(np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

        if self.feature_names is not None:
            names = list(self.feature_names)
            if len(names) != X.shape[1]:
                raise ValidationError(
                    f"{self.name}: {len(names)} feature names for {X.shape[1]} columns"
                )
            object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_outliers(self) -> int:
        if self.labels is None:
            raise ValidationError(f"{self.name}: dataset is unlabeled")
        return int(self.labels.sum())

    def with_X(self, X, name=None) -> "TabularDataset":
        """Copy with a replacement matrix; labels are kept only if rows line up."""
        X = np.asarray(X, dtype=np.float64)
        labels = self.labels if X.shape[0] == self.n_samples else None
        names = self.feature_names if X.shape[1:] == (self.n_features,) else None
        return TabularDataset(name or self.name, X, labels, names)

    def unlabeled(self) -> "TabularDataset":
        return TabularDataset(self.name, self.X, None, self.feature_names)


def _parse_label(raw, row, column):
    try:
        value = float(raw)
    except ValueError:
        value = math.nan
    if value not in (0.0, 1.0):
        raise ValidationError(f"row {row}, column {column!r}: label {raw!r} is not 0 or 1")
    return int(value)


def load_csv(path, label_column: Optional[str] = None, name: Optional[str] = None) -> TabularDataset:
    """Read a headed, comma-separated numeric table.

    Rows are numbered from 1 starting at the first data row in error
    messages. Any non-finite or unparsable cell is an error; nothing is
    dropped silently.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None

        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise ValidationError(f"{path}: label column {label_column!r} not in header")
            label_idx = header.index(label_column)
        feature_cols = [i for i in range(len(header)) if i != label_idx]

        rows, labels = [], []
        for row_no, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise ValidationError(
                    f"{path}: row {row_no} has {len(cells)} cells, header has {len(header)}"
                )
            values = []
            for i in feature_cols:
                raw = cells[i].strip()
                try:
                    v = float(raw)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise ValidationError(
                        f"{path}: row {row_no}, column {header[i]!r}: {raw!r} is not a finite number"
                    )
                values.append(v)
            rows.append(values)
            if label_idx is not None:
                labels.append(_parse_label(cells[label_idx].strip(), row_no, label_column))

    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return TabularDataset(
        name=name or path.stem,
        X=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64) if label_idx is not None else None,
        feature_names=[header[i] for i in feature_cols],
    )


def write_csv(ds: TabularDataset, path, label_column: Optional[str] = "label") -> None:
    """Write ``ds`` in the format ``load_csv`` reads; floats use repr precision."""
    names = ds.feature_names or [f"f{i}" for i in range(ds.n_features)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        with_labels = ds.labels is not None and label_column is not None
        writer.writerow(names + ([label_column] if with_labels else []))
        for i, row in enumerate(ds.X):
            cells = [repr(float(v)) for v in row]
            if with_labels:
                cells.append(str(int(ds.labels[i])))
            writer.writerow(cells)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-scoring with population (1/n) standard deviation."""

    per_feature_mean: np.ndarray
    per_feature_std: np.ndarray

    def _check(self, X):
        if X.shape[1] != self.per_feature_mean.shape[0]:
            raise ValidationError(
                f"normalizer fitted on {self.per_feature_mean.shape[0]} features, got {X.shape[1]}"
            )

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        self._check(X)
        return (X - self.per_feature_mean) / self.per_feature_std

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        self._check(Z)
        return Z * self.per_feature_std + self.per_feature_mean


def fit_normalizer(ds) -> Normalizer:
    X = ds.X if isinstance(ds, TabularDataset) else np.asarray(ds, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # constant columns map to zero instead of dividing by zero; the relative
    # floor catches columns whose std is pure rounding noise
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return Normalizer(mean, std)


def apply_normalizer(norm: Normalizer, ds: TabularDataset) -> TabularDataset:
    return ds.with_X(norm.transform(ds.X))


def normalized(ds: TabularDataset) -> TabularDataset:
    """Z-score ``ds`` with its own statistics."""
    return apply_normalizer(fit_normalizer(ds), ds)


def minibatches(ds, batch_size: int, seed: int) -> list:
    """Partition the rows into shuffled batches; the last one may be short."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    X = ds.X if isinstance(ds, TabularDataset) else np.asarray(ds)
    order = np.random.default_rng(seed).permutation(X.shape[0])
    return [X[order[i:i + batch_size]] for i in range(0, X.shape[0], batch_size)]


def as_matrix(data) -> np.ndarray:
    if isinstance(data, TabularDataset):
        return data.X
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {X.shape}")
    return X

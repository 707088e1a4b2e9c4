"""PCA reconstruction-error curves and the SAD dataset similarity.

A dataset's fingerprint is the mean per-cell squared PCA reconstruction
error for k = 1..100 retained components. Two datasets are compared by the
sum of absolute differences between their curves, which works for any pair
of feature counts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tda.dataset import TabularDataset, as_matrix, normalized
from tda.errors import ValidationError

CURVE_LENGTH = 100


@dataclass(frozen=True)
class PcaModel:
    """Top-k principal directions.

    ``components`` has one unit-norm direction per row, ordered by
    non-increasing eigenvalue.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_features(self):
        return self.mean.shape[0]

    @property
    def n_components(self):
        return self.components.shape[0]

    def project(self, X):
        return (X - self.mean) @ self.components.T

    def reconstruct(self, X):
        return self.project(X) @ self.components + self.mean


def _fix_signs(vectors):
    # rows: flip so that the largest-magnitude entry is positive
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _eigh_desc(X):
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    try:
        w, v = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"eigensolver failed to converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    return mean, w, _fix_signs(v[:, order].T)


def pca_fit(X, k: int) -> PcaModel:
    """Eigendecomposition of the (1/n) covariance, keeping ``k`` components."""
    X = as_matrix(X)
    D = X.shape[1]
    if not 1 <= k <= D:
        raise ValidationError(f"k must lie in [1, {D}], got {k}")
    mean, w, vecs = _eigh_desc(X)
    return PcaModel(mean=mean, components=vecs[:k].copy(), eigenvalues=w[:k].copy())


def per_sample_error(X, model: PcaModel) -> np.ndarray:
    """Mean squared reconstruction error of each row."""
    X = as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValidationError(
            f"model has {model.n_features} features, data has {X.shape[1]}"
        )
    return np.mean((X - model.reconstruct(X)) ** 2, axis=1)


def reconstruction_error(X, model: PcaModel) -> float:
    """Mean over all cells of the squared reconstruction residual."""
    return float(np.mean(per_sample_error(X, model)))


@dataclass(frozen=True, eq=False)
class ReconstructionCurve:
    """``errors[k-1]`` is the mean reconstruction error with k components."""

    errors: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.errors, dtype=np.float64)
        if e.shape != (CURVE_LENGTH,):
            raise ValidationError(f"curve must have {CURVE_LENGTH} entries, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValidationError("curve contains non-finite values")
        e.setflags(write=False)
        object.__setattr__(self, "errors", e)

    def __eq__(self, other):
        if not isinstance(other, ReconstructionCurve):
            return NotImplemented
        return bool(np.array_equal(self.errors, other.errors))

    __hash__ = None

    def to_list(self):
        return [float(v) for v in self.errors]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_list(cls, values):
        return cls(np.asarray(values, dtype=np.float64))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "error"])
            for k, e in enumerate(self.errors, start=1):
                writer.writerow([k, repr(float(e))])


def reconstruction_curve(ds) -> ReconstructionCurve:
    """Curve of residual errors for k = 1..100 on the data as given.

    Residuals are measured directly: the captured energy of each projected
    direction is subtracted from the total energy of the centered matrix.
    Entries past the feature count repeat the full-basis value.
    """
    X = as_matrix(ds)
    n, D = X.shape
    mean, _, vecs = _eigh_desc(X)
    Xc = X - mean
    kmax = min(D, CURVE_LENGTH)
    captured = np.sum((Xc @ vecs[:kmax].T) ** 2, axis=0)
    residual = np.sum(Xc ** 2) - np.cumsum(captured)
    errors = np.clip(residual, 0.0, None) / (n * D)
    if kmax == D:
        # the full basis reconstructs exactly; the leftover is rounding
        errors[-1] = 0.0
    errors = np.minimum.accumulate(errors)
    padded = np.empty(CURVE_LENGTH)
    padded[:kmax] = errors
    padded[kmax:] = errors[-1]
    return ReconstructionCurve(padded)


def sad(a: ReconstructionCurve, b: ReconstructionCurve) -> float:
    """Sum of absolute differences between two curves."""
    ea = a.errors if isinstance(a, ReconstructionCurve) else np.asarray(a, dtype=np.float64)
    eb = b.errors if isinstance(b, ReconstructionCurve) else np.asarray(b, dtype=np.float64)
    if ea.shape != (CURVE_LENGTH,) or eb.shape != (CURVE_LENGTH,):
        raise ValidationError("SAD needs two curves of length 100")
    return float(np.sum(np.abs(ea - eb)))


SAD_TIE_DECIMALS = 12


def dataset_curve(ds: TabularDataset) -> ReconstructionCurve:
    """Curve of the z-scored dataset, the form stored in index manifests."""
    return reconstruction_curve(normalized(ds))


def rank_similar(private: TabularDataset, index) -> list:
    """Public entries ordered from most to least similar (ascending SAD).

    Scores equal to 12 decimals count as ties and are ordered by dataset
    name; row order alone moves a curve by round-off of about 1e-14.
    """
    entries = list(getattr(index, "entries", index))
    if not entries:
        raise ValidationError("cannot rank against an empty index")
    curve = dataset_curve(private)
    scored = [(entry, sad(curve, entry.curve)) for entry in entries]
    scored.sort(key=lambda pair: (round(pair[1], SAD_TIE_DECIMALS), pair[0].dataset_name))
    return scored

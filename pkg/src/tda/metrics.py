"""Labeling quality metrics for binary outlier labels and continuous scores."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from tda.errors import ValidationError


def _pair(a, truth):
    a = np.asarray(a)
    y = np.asarray(truth).astype(np.int64)
    if a.shape != y.shape or a.ndim != 1:
        raise ValidationError(f"length mismatch: {a.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("truth must contain only 0 and 1")
    return a, y


def _both_classes(y):
    if y.min() == y.max():
        raise ValidationError("metric undefined: truth contains a single class")


def confusion(pred, truth):
    """(tp, fp, tn, fn) with 1 = outlier as the positive class."""
    p, y = _pair(pred, truth)
    p = p.astype(np.int64)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return tp, fp, tn, fn


def balanced_accuracy(pred, truth) -> float:
    """Mean of the true-positive and true-negative rates."""
    _both_classes(_pair(pred, truth)[1])
    tp, fp, tn, fn = confusion(pred, truth)
    # exact integer numerator, one rounding
    pos, neg = tp + fn, tn + fp
    return (tp * neg + tn * pos) / (2 * pos * neg)


def f1(pred, truth) -> float:
    tp, fp, tn, fn = confusion(pred, truth)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def roc_auc(scores, truth) -> float:
    """Mann-Whitney estimate P(s_out > s_in) + P(s_out == s_in) / 2 via midranks."""
    s, y = _pair(scores, truth)
    _both_classes(y)
    ranks = rankdata(s.astype(np.float64), method="average")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, truth) -> float:
    """Average precision: sum of precision * recall increment over score thresholds.

    Samples with equal scores enter together at a single threshold.
    """
    s, y = _pair(scores, truth)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValidationError("PR-AUC undefined: truth has no positives")
    order = np.argsort(-s.astype(np.float64), kind="mergesort")
    s_sorted = s[order].astype(np.float64)
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # last index of every block of tied scores
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp, fp = tp[ends], fp[ends]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    delta = np.diff(np.r_[0.0, recall])
    return float(np.sum(precision * delta))

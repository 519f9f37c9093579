"""Clustering and prediction quality metrics."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import DataError

# Marker for a ratio whose denominator is zero (e.g. precision with no
# positive predictions). Kept distinct from 0.0 on purpose.
UNDEFINED = None


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Normalized mutual information, arithmetic-mean normalization.

    Noise (-1) is an ordinary label here.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DataError("label vectors must be nonempty")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    n = a.size
    nz = joint > 0
    pij = joint[nz] / n
    outer = np.outer(joint.sum(axis=1), joint.sum(axis=0))[nz] / (n * n)
    # sorted summation makes nmi(a, b) == nmi(b, a) bit for bit
    mi = float(np.sort(pij * np.log(pij / outer)).sum())
    return float(min(max(mi / ((ha + hb) / 2.0), 0.0), 1.0))


def _ratio(num: float, den: float) -> Optional[float]:
    return UNDEFINED if den == 0 else num / den


def prf1(predicted, actual) -> tuple[Optional[float], Optional[float], Optional[float]]:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    if predicted.shape != actual.shape:
        raise DataError("predicted and actual differ in length")
    tp = float(np.sum(predicted & actual))
    fp = float(np.sum(predicted & ~actual))
    fn = float(np.sum(~predicted & actual))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None:
        f1 = UNDEFINED
    else:
        f1 = _ratio(2 * precision * recall, precision + recall)
        if f1 is None:
            f1 = 0.0
    return precision, recall, f1


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise DataError("pred and actual differ in length")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


# Early/late divisors of the PHM challenge RUL score.
NASA_EARLY = 13.0
NASA_LATE = 10.0


def nasa_terms(d: np.ndarray) -> np.ndarray:
    """Per-sample asymmetric penalty for d = predicted - true RUL."""
    d = np.asarray(d, dtype=float)
    return np.where(d < 0, np.expm1(-d / NASA_EARLY), np.expm1(d / NASA_LATE))


def nasa_score(pred_rul, true_rul) -> float:
    pred_rul = np.asarray(pred_rul, dtype=float)
    true_rul = np.asarray(true_rul, dtype=float)
    if pred_rul.shape != true_rul.shape:
        raise DataError("pred_rul and true_rul differ in length")
    return float(nasa_terms(pred_rul - true_rul).sum())


def fmt(value: Optional[float], digits: int = 2) -> str:
    """Render a metric, showing undefined values as 'n/a'."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.{digits}f}"

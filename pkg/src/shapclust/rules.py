"""Short conjunctive rules describing clusters in original feature units.

Candidates come from bootstrapped depth-2 gini trees restricted to a
whitelist of features; each root-to-leaf path into a majority-positive leaf
is a rule of at most two threshold terms. Candidates are scored on the full
data, filtered by precision/recall floors, and deduplicated by the Jaccard
overlap of the samples they cover.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .cluster import NOISE, Clustering
from .core import Dataset
from .errors import DataError
from .metrics import fmt, prf1

MAX_TERMS = 2
TOP_FEATURES = 10
DEDUP_JACCARD = 0.9


@dataclass(frozen=True, order=True)
class Term:
    feature: str
    op: str  # "<=" or ">"
    threshold: float

    def holds(self, col: np.ndarray) -> np.ndarray:
        return col <= self.threshold if self.op == "<=" else col > self.threshold

    def __str__(self):
        return f"{self.feature} {self.op} {self.threshold:.6g}"

    def pretty(self, digits: int = 1) -> str:
        op = "≤" if self.op == "<=" else ">"
        return f"{self.feature} {op} {self.threshold:.{digits}f}"


@dataclass(frozen=True)
class Rule:
    terms: tuple[Term, ...]
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    cluster: Optional[int] = None

    def covers(self, data: Dataset) -> np.ndarray:
        out = np.ones(data.n_samples, dtype=bool)
        for t in self.terms:
            out &= t.holds(data.column(t.feature))
        return out

    @property
    def features(self) -> set[str]:
        return {t.feature for t in self.terms}

    def __str__(self):
        return " AND ".join(str(t) for t in self.terms)

    def pretty(self, digits: int = 1) -> str:
        return " AND ".join(t.pretty(digits) for t in self.terms)


# --------------------------------------------------------------------------
# depth-2 trees


def _gini_split(x: np.ndarray, y: np.ndarray):
    """Best midpoint threshold on one feature: (weighted gini, threshold)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order].astype(float)
    n = xs.size
    cut = np.flatnonzero(xs[1:] > xs[:-1])  # split after position cut
    if cut.size == 0:
        return np.inf, None
    left_n = cut + 1.0
    left_pos = np.cumsum(ys)[cut]
    right_n = n - left_n
    right_pos = ys.sum() - left_pos
    pl = left_pos / left_n
    pr = right_pos / right_n
    gini = (left_n * 2 * pl * (1 - pl) + right_n * 2 * pr * (1 - pr)) / n
    best = int(np.argmin(gini))
    return float(gini[best]), float((xs[cut[best]] + xs[cut[best] + 1]) / 2.0)


def _best_split(X: np.ndarray, y: np.ndarray):
    p = y.mean()
    parent = 2 * p * (1 - p)
    best = (parent, None, None)
    for j in range(X.shape[1]):
        g, thr = _gini_split(X[:, j], y)
        if thr is not None and g < best[0] - 1e-12:
            best = (g, j, thr)
    return best[1], best[2]


def _tree_paths(X: np.ndarray, y: np.ndarray, names: Sequence[str], depth: int = MAX_TERMS):
    """Positive-leaf paths of a gini tree grown to ``depth``."""
    paths = []

    def grow(idx, path):
        ys = y[idx]
        if len(path) == depth or ys.all() or not ys.any():
            if ys.mean() > 0.5:
                paths.append(tuple(path))
            return
        j, thr = _best_split(X[idx], ys)
        if j is None:
            if ys.mean() > 0.5:
                paths.append(tuple(path))
            return
        col = X[idx, j]
        grow(idx[col <= thr], path + [Term(names[j], "<=", thr)])
        grow(idx[col > thr], path + [Term(names[j], ">", thr)])

    grow(np.arange(y.size), [])
    return [p for p in paths if p]


def candidate_rules(
    X_orig: Dataset,
    target_mask,
    allowed: Sequence[str],
    n_trees: int = 30,
    seed: int = 0,
    bootstrap_fraction: float = 0.8,
) -> list[Rule]:
    """Unscored candidate rules from ``n_trees`` bootstrapped depth-2 trees."""
    mask = np.asarray(target_mask, dtype=bool)
    if mask.size != X_orig.n_samples:
        raise DataError("target mask length does not match the data")
    if mask.all() or not mask.any():
        raise DataError("target mask must contain both positive and negative samples")
    allowed = list(dict.fromkeys(allowed))
    if not allowed:
        raise DataError("allowed feature list is empty")
    cols = [X_orig.feature_names.index(f) for f in allowed if f in X_orig.feature_names]
    if len(cols) != len(allowed):
        missing = [f for f in allowed if f not in X_orig.feature_names]
        raise DataError(f"allowed features not in data: {missing}")
    X = X_orig.rows[:, cols]
    rng = np.random.default_rng(seed)
    n = mask.size
    m = max(2, int(round(bootstrap_fraction * n)))
    seen: dict[tuple, Rule] = {}
    for _ in range(n_trees):
        idx = rng.integers(0, n, size=m)
        if mask[idx].all() or not mask[idx].any():
            continue
        for path in _tree_paths(X[idx], mask[idx], allowed):
            key = tuple(sorted(path))
            seen.setdefault(key, Rule(key))
    return list(seen.values())


# --------------------------------------------------------------------------
# scoring


def score_rule(rule: Rule, X_orig: Dataset, mask) -> Rule:
    pr, rc, f1 = prf1(rule.covers(X_orig), np.asarray(mask, dtype=bool))
    return replace(rule, precision=pr, recall=rc, f1=f1)


def _sort_key(r: Rule):
    return (-(r.f1 or 0.0), len(r.terms), r.terms)


def score_and_filter(
    cands: Sequence[Rule],
    X_orig: Dataset,
    mask,
    min_precision: float = 0.6,
    min_recall: float = 0.3,
) -> list[Rule]:
    """Score on all samples, apply the precision/recall floors, then drop any
    rule whose covered set overlaps a better rule's with Jaccard > 0.9."""
    for v in (min_precision, min_recall):
        if not 0.0 <= v <= 1.0:
            raise DataError("precision/recall thresholds must lie in [0, 1]")
    mask = np.asarray(mask, dtype=bool)
    scored = []
    for r in cands:
        r = score_rule(r, X_orig, mask)
        if r.precision is None or r.recall is None:
            continue
        if r.precision < min_precision or r.recall < min_recall:
            continue
        scored.append(r)
    scored.sort(key=_sort_key)
    kept, supports = [], []
    for r in scored:
        s = r.covers(X_orig)
        dup = False
        for t in supports:
            union = np.count_nonzero(s | t)
            jac = 1.0 if union == 0 else np.count_nonzero(s & t) / union
            if jac > DEDUP_JACCARD:
                dup = True
                break
        if not dup:
            kept.append(r)
            supports.append(s)
    return kept


def check_rule(rule: Rule, allowed: Sequence[str], X_orig: Dataset) -> None:
    """Raise AssertionError unless the rule has 1-2 terms over allowed
    features with thresholds inside the raw column ranges."""
    assert 1 <= len(rule.terms) <= MAX_TERMS, f"rule has {len(rule.terms)} terms"
    assert rule.features <= set(allowed), f"features {rule.features - set(allowed)} not allowed"
    for t in rule.terms:
        col = X_orig.column(t.feature)
        assert col.min() <= t.threshold <= col.max(), (
            f"threshold {t.threshold} outside original range of {t.feature}"
        )


@dataclass(frozen=True)
class ClusterDescription:
    cluster: int
    rule: Optional[Rule]
    size: int
    prediction: str = ""

    @property
    def described(self) -> bool:
        return self.rule is not None


def describe_clusters(
    clustering: Clustering,
    X_orig: Dataset,
    importance: Sequence,
    min_precision: float = 0.6,
    min_recall: float = 0.3,
    seed: int = 0,
    n_trees: int = 30,
    top_k: int = TOP_FEATURES,
    prediction: str = "",
) -> list[ClusterDescription]:
    """Best-F1 surviving rule for each non-noise cluster, one cluster vs the
    rest, using only the ``top_k`` most important features."""
    labels = np.asarray(clustering.labels)
    if labels.size != X_orig.n_samples:
        raise DataError("clustering and data differ in length")
    ranked = [f if isinstance(f, str) else f[0] for f in importance]
    allowed = [f for f in ranked if f in X_orig.feature_names][:top_k]
    if not allowed:
        raise DataError("no ranked feature is present in the data")
    out = []
    for c in range(clustering.n_clusters):
        if c == NOISE:
            continue
        mask = labels == c
        best = None
        if mask.any() and not mask.all():
            cands = candidate_rules(X_orig, mask, allowed, n_trees, seed + c)
            kept = score_and_filter(cands, X_orig, mask, min_precision, min_recall)
            if kept:
                best = replace(kept[0], cluster=c)
                check_rule(best, allowed, X_orig)
        out.append(ClusterDescription(c, best, int(mask.sum()), prediction))
    return out


# --------------------------------------------------------------------------
# export

COLUMNS = ("Prediction", "Cluster", "Identified Rule", "Precision", "Recall", "F1-Score")


def _cells(d: ClusterDescription, digits: int) -> list[str]:
    if d.rule is None:
        return [d.prediction, str(d.cluster), "undescribed", "n/a", "n/a", "n/a"]
    r = d.rule
    return [
        d.prediction,
        str(d.cluster),
        r.pretty(digits),
        fmt(r.precision),
        fmt(r.recall),
        fmt(r.f1),
    ]


def rules_markdown(rows: Sequence[ClusterDescription], digits: int = 1) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    last = None
    for d in rows:
        cells = _cells(d, digits)
        if cells[0] == last:
            cells[0] = ""
        else:
            last = cells[0]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def rules_csv(rows: Sequence[ClusterDescription], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prediction", "cluster", "size", "rule", "precision", "recall", "f1"])
        for d in rows:
            r = d.rule
            w.writerow(
                [
                    d.prediction,
                    d.cluster,
                    d.size,
                    "undescribed" if r is None else str(r),
                    "" if r is None or r.precision is None else f"{r.precision:.17g}",
                    "" if r is None or r.recall is None else f"{r.recall:.17g}",
                    "" if r is None or r.f1 is None else f"{r.f1:.17g}",
                ]
            )

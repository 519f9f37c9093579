"""Shapley attributions of a predictor output.

Two estimators share one coalition-value convention: a coalition S takes the
explained sample's values on S and a background row's values elsewhere, and
its value is the prediction averaged over background rows.

``exact_shapley`` enumerates all 2^N coalitions. ``mc_shapley`` samples
(permutation, background row) pairs and walks each permutation once,
swapping background values for sample values one feature at a time and
crediting each feature the change in prediction. Every walk telescopes, so
phi0 + sum(phi) equals f(x) exactly when phi0 is the mean prediction over
the drawn background rows.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import SCHEMA_VERSION, Dataset
from .errors import DataError
from .model import Predictor

MAX_EXACT_FEATURES = 20
PREDICTED_CLASS = "@predicted_class"
_CHUNK_ELEMS = 4_000_000


def _as_matrix(background) -> np.ndarray:
    B = background.rows if isinstance(background, Dataset) else np.asarray(background, float)
    if B.ndim == 1:
        B = B[None, :]
    if B.shape[0] == 0:
        raise DataError("background set is empty")
    return B


def _evaluate(p: Predictor, X: np.ndarray, k: int) -> np.ndarray:
    return p.predict_batch(X)[:, k]


def coalition_values(p: Predictor, x, background, output: str) -> np.ndarray:
    """v[mask] for every bitmask over features (bit j set: feature j from x)."""
    x = np.asarray(x, dtype=float)
    B = _as_matrix(background)
    n = x.size
    if n > MAX_EXACT_FEATURES:
        raise DataError(
            f"exact Shapley is capped at {MAX_EXACT_FEATURES} features, got {n}"
        )
    if B.shape[1] != n:
        raise DataError("background and sample differ in feature count")
    k = p.output_index(output)
    masks = np.arange(1 << n)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    values = np.empty(masks.size)
    per_chunk = max(1, _CHUNK_ELEMS // (B.shape[0] * n))
    for start in range(0, masks.size, per_chunk):
        sel = bits[start : start + per_chunk]
        comp = np.where(sel[:, None, :], x[None, None, :], B[None, :, :])
        f = _evaluate(p, comp.reshape(-1, n), k).reshape(sel.shape[0], B.shape[0])
        values[start : start + sel.shape[0]] = f.mean(axis=1)
    return values


def exact_shapley(p: Predictor, x, background, output: str) -> tuple[np.ndarray, float]:
    """Exact Shapley values by subset enumeration; 2^N * |background| calls."""
    x = np.asarray(x, dtype=float)
    n = x.size
    v = coalition_values(p, x, background, output)
    masks = np.arange(1 << n)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight = np.array(
        [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    )
    phi = np.empty(n)
    for j in range(n):
        without = masks[(masks >> j) & 1 == 0]
        phi[j] = np.sum(weight[sizes[without]] * (v[without | (1 << j)] - v[without]))
    return phi, float(v[0])


@dataclass(frozen=True)
class MCSamples:
    contributions: np.ndarray  # (m, N) per-walk credit
    baselines: np.ndarray  # (m,) f(z) for each drawn background row
    prediction: float  # f(x)

    @property
    def phi(self) -> np.ndarray:
        return self.contributions.mean(axis=0)

    @property
    def phi0(self) -> float:
        return float(self.baselines.mean())

    @property
    def stderr(self) -> np.ndarray:
        m = self.contributions.shape[0]
        if m < 2:
            return np.full(self.contributions.shape[1], np.inf)
        return self.contributions.std(axis=0, ddof=1) / np.sqrt(m)


def mc_samples(
    p: Predictor, x, background, output: str, m: int, seed: int, output_index: Optional[int] = None
) -> MCSamples:
    x = np.asarray(x, dtype=float)
    B = _as_matrix(background)
    if m < 1:
        raise DataError(f"need at least one Monte Carlo sample, got m={m}")
    n = x.size
    if B.shape[1] != n:
        raise DataError("background and sample differ in feature count")
    k = p.output_index(output) if output_index is None else output_index
    rng = np.random.default_rng(seed)
    order = np.argsort(rng.random((m, n)), axis=1)
    zi = rng.integers(0, B.shape[0], size=m)
    # rank[t, j]: step at which feature j switches from background to sample
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n)[None, :], axis=1)
    steps = np.arange(n + 1)

    contrib = np.empty((m, n))
    base = np.empty(m)
    per_chunk = max(1, _CHUNK_ELEMS // ((n + 1) * n))
    for start in range(0, m, per_chunk):
        sl = slice(start, start + per_chunk)
        r = rank[sl]
        Z = B[zi[sl]]
        take_x = r[:, None, :] < steps[None, :, None]  # (c, n+1, n)
        comp = np.where(take_x, x[None, None, :], Z[:, None, :])
        f = _evaluate(p, comp.reshape(-1, n), k).reshape(r.shape[0], n + 1)
        delta = np.diff(f, axis=1)  # delta[t, s] belongs to feature order[t, s]
        np.put_along_axis(contrib[sl], order[sl], delta, axis=1)
        base[sl] = f[:, 0]
    fx = float(_evaluate(p, x[None, :], k)[0])
    return MCSamples(contrib, base, fx)


def mc_shapley(
    p: Predictor, x, background, output: str, m: int = 60, seed: int = 0
) -> tuple[np.ndarray, float]:
    """Monte Carlo permutation estimate; m walks of N+1 model calls each."""
    s = mc_samples(p, x, background, output, m, seed)
    return s.phi, s.phi0


@dataclass(frozen=True)
class AttributionMatrix:
    target_output: str
    feature_names: tuple[str, ...]
    sample_ids: tuple[str, ...]
    phi: np.ndarray
    phi0: float
    estimator: str
    mc_samples: int
    background_summary: str
    phi0_rows: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    explained_outputs: Optional[tuple[str, ...]] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.phi.shape

    def local_accuracy_gap(self) -> np.ndarray:
        """|f(x_i) - phi0_i - sum_j phi_ij| per row."""
        base = self.phi0_rows if self.phi0_rows is not None else self.phi0
        return np.abs(self.predictions - base - self.phi.sum(axis=1))

    def as_dataset(self) -> Dataset:
        return Dataset(self.feature_names, self.phi, None, self.sample_ids)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "target_output": self.target_output,
            "estimator": self.estimator,
            "mc_samples": self.mc_samples,
            "background_summary": self.background_summary,
            "feature_names": list(self.feature_names),
            "sample_ids": list(self.sample_ids),
            "phi0": self.phi0,
            "phi0_rows": None if self.phi0_rows is None else self.phi0_rows.tolist(),
            "predictions": None if self.predictions is None else self.predictions.tolist(),
            "explained_outputs": None
            if self.explained_outputs is None
            else list(self.explained_outputs),
            "phi": self.phi.ravel().tolist(),
            "shape": list(self.phi.shape),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttributionMatrix":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError("not a schema_version 1 attribution document")

        def arr(key):
            return None if doc.get(key) is None else np.asarray(doc[key], dtype=float)

        eo = doc.get("explained_outputs")
        return cls(
            doc["target_output"],
            tuple(doc["feature_names"]),
            tuple(doc["sample_ids"]),
            np.asarray(doc["phi"], dtype=float).reshape(doc["shape"]),
            float(doc["phi0"]),
            doc["estimator"],
            int(doc["mc_samples"]),
            doc.get("background_summary", ""),
            arr("phi0_rows"),
            arr("predictions"),
            None if eo is None else tuple(eo),
        )

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", *self.feature_names])
            for sid, row in zip(self.sample_ids, self.phi):
                w.writerow([sid, *(f"{v:.17g}" for v in row)])


def sample_background(data: Dataset, cap: int = 100, seed: int = 0) -> tuple[Dataset, str]:
    """Uniform subsample without replacement, at most ``cap`` rows."""
    if data.n_samples == 0:
        raise DataError("cannot draw a background from an empty dataset")
    if data.n_samples <= cap:
        return data, f"all {data.n_samples} reference rows"
    idx = np.sort(np.random.default_rng(seed).choice(data.n_samples, cap, replace=False))
    return data.take(idx), f"uniform subsample of {cap}/{data.n_samples} rows (seed {seed})"


def attribute_dataset(
    p: Predictor,
    data: Dataset,
    background,
    output: str,
    m: int = 60,
    seed: int = 0,
    estimator: str = "mc_permutation",
    threads: int = 1,
    class_outputs: Optional[Sequence[str]] = None,
    background_summary: Optional[str] = None,
) -> AttributionMatrix:
    """Attribute every row of ``data``. Row i uses seed ``seed ^ i``, so the
    result does not depend on the thread count.

    ``output=PREDICTED_CLASS`` explains, per row, the class head in
    ``class_outputs`` with the highest predicted probability.
    """
    B = _as_matrix(background)
    if estimator not in ("mc_permutation", "exact"):
        raise DataError(f"unknown estimator {estimator!r}")
    if output == PREDICTED_CLASS:
        if not class_outputs:
            raise DataError("explaining the predicted class needs class_outputs")
        cidx = [p.output_index(c) for c in class_outputs]
        full = p.predict_batch(data.rows)[:, cidx]
        row_outputs = [class_outputs[i] for i in np.argmax(full, axis=1)]
    else:
        p.output_index(output)
        row_outputs = [output] * data.n_samples

    def one(i: int):
        x = data.rows[i]
        if estimator == "exact":
            phi, phi0 = exact_shapley(p, x, B, row_outputs[i])
            fx = float(p.predict_output(x[None, :], row_outputs[i])[0])
            return phi, phi0, fx
        s = mc_samples(p, x, B, row_outputs[i], m, seed ^ i)
        return s.phi, s.phi0, s.prediction

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(data.n_samples)))
    else:
        results = [one(i) for i in range(data.n_samples)]

    phi = np.array([r[0] for r in results]).reshape(data.n_samples, data.n_features)
    phi0_rows = np.array([r[1] for r in results])
    preds = np.array([r[2] for r in results])
    if output == PREDICTED_CLASS:
        base_all = p.predict_batch(B)[:, cidx].mean(axis=0)
        phi0 = float(np.mean([base_all[list(class_outputs).index(o)] for o in row_outputs]))
    else:
        phi0 = float(p.predict_output(B, output).mean())
    phi.setflags(write=False)
    return AttributionMatrix(
        target_output=output,
        feature_names=data.feature_names,
        sample_ids=data.sample_ids,
        phi=phi,
        phi0=phi0,
        estimator=estimator,
        mc_samples=0 if estimator == "exact" else int(m),
        background_summary=background_summary or f"{B.shape[0]} reference rows",
        phi0_rows=phi0_rows,
        predictions=preds,
        explained_outputs=tuple(row_outputs) if output == PREDICTED_CLASS else None,
    )


def global_importance(a: AttributionMatrix) -> list[tuple[str, float]]:
    """Features by descending mean |phi|; ties keep column order."""
    if a.phi.shape[0] < 1:
        raise DataError("attribution matrix has no rows")
    score = np.abs(a.phi).mean(axis=0)
    order = np.argsort(-score, kind="stable")
    return [(a.feature_names[j], float(score[j])) for j in order]

"""UMAP embedding: exact kNN graph, fuzzy membership calibration, probabilistic
union, and a negative-sampling SGD layout.

Distances between clusters in the resulting coordinates are not meaningful;
UMAP does not preserve densities. Only neighborhood structure survives.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from .core import SCHEMA_VERSION
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SIGMA_LO = 1e-12
SIGMA_HI = 1e6
CALIBRATION_TOL = 1e-5


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 200
    min_dist: float = 0.0
    n_components: int = 2
    n_epochs: Optional[int] = None  # None: 500 below 10k samples, else 200
    negative_sample_rate: int = 5
    seed: int = 0
    metric: str = "euclidean"
    spread: float = 1.0
    learning_rate: float = 1.0
    parallel: bool = False

    def __post_init__(self):
        if self.metric != "euclidean":
            raise ConfigError(f"only the euclidean metric is supported, got {self.metric!r}")
        if self.min_dist < 0:
            raise ConfigError("min_dist must be >= 0")
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.n_epochs is not None and self.n_epochs < 1:
            raise ConfigError("n_epochs must be >= 1")
        if self.negative_sample_rate < 0:
            raise ConfigError("negative_sample_rate must be >= 0")

    def resolved(self, n_samples: int) -> "UmapParams":
        k = min(self.n_neighbors, n_samples - 1)
        if k < 2:
            raise DataError(
                f"UMAP needs n_neighbors >= 2 after clamping to n_samples-1; n_samples={n_samples}"
            )
        epochs = self.n_epochs or (500 if n_samples < 10_000 else 200)
        return replace(self, n_neighbors=k, n_epochs=epochs)


@dataclass(frozen=True)
class Embedding:
    coords: np.ndarray
    params: UmapParams
    n_edges: int
    mean_edge_weight: float
    sample_ids: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": asdict(self.params),
            "graph_stats": {"n_edges": self.n_edges, "mean_edge_weight": self.mean_edge_weight},
            "sample_ids": list(self.sample_ids),
            "coords": self.coords.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Embedding":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError("not a schema_version 1 embedding document")
        gs = doc["graph_stats"]
        return cls(
            np.asarray(doc["coords"], dtype=float),
            UmapParams(**doc["params"]),
            int(gs["n_edges"]),
            float(gs["mean_edge_weight"]),
            tuple(doc.get("sample_ids", ())),
        )

    def to_csv(self, path) -> None:
        ids = self.sample_ids or tuple(str(i) for i in range(self.coords.shape[0]))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", *(f"c{j + 1}" for j in range(self.coords.shape[1]))])
            for sid, row in zip(ids, self.coords):
                w.writerow([sid, *(f"{v:.17g}" for v in row)])


# --------------------------------------------------------------------------
# graph construction


def knn_graph(X, k: int, block: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors by brute force, self excluded, ties by index."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k < n:
        raise DataError(f"k must satisfy 1 <= k < n_samples ({n}), got {k}")
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    sq = np.einsum("ij,ij->i", X, X)
    # keep the per-block difference tensor around 32M floats at most
    block = max(1, min(block, 32_000_000 // max(1, n * X.shape[1])))
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = np.arange(start, stop)
        if X.shape[1] <= 64:
            d2 = ((X[start:stop, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        else:
            d2 = np.maximum(sq[start:stop, None] + sq[None, :] - 2 * X[start:stop] @ X.T, 0.0)
        d2[rows - start, rows] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx, dist


def _membership_sum(d: np.ndarray, rho: float, sigma: float) -> float:
    return float(np.exp(-np.maximum(d - rho, 0.0) / sigma).sum())


def smooth_knn(distances, k: Optional[int] = None, n_iter: int = 64):
    """Per-row (rho, sigma) such that sum_j exp(-max(0, d_ij - rho_i)/sigma_i)
    equals log2(k).

    Rows whose target is out of reach inside [SIGMA_LO, SIGMA_HI] get the
    bracket end nearest to it. Rows of all-zero distances get sigma = 1.
    Returns (rho, sigma, solvable).
    """
    D = np.asarray(distances, dtype=float)
    if D.ndim == 1:
        D = D[None, :]
    k = D.shape[1] if k is None else k
    target = math.log2(k)
    n = D.shape[0]
    rho = np.zeros(n)
    sigma = np.ones(n)
    solvable = np.zeros(n, dtype=bool)
    for i in range(n):
        d = D[i]
        pos = d[d > 0]
        if pos.size == 0:
            continue
        rho[i] = pos[0] if np.all(np.diff(d) >= 0) else pos.min()
        lo_sum = _membership_sum(d, rho[i], SIGMA_LO)
        hi_sum = _membership_sum(d, rho[i], SIGMA_HI)
        if lo_sum > target + CALIBRATION_TOL:
            sigma[i] = SIGMA_LO
            continue
        if hi_sum < target - CALIBRATION_TOL:
            sigma[i] = SIGMA_HI
            continue
        lo, hi = SIGMA_LO, SIGMA_HI
        for _ in range(n_iter):
            # geometric midpoint: the bracket spans 18 decades
            mid = math.sqrt(lo * hi)
            if _membership_sum(d, rho[i], mid) > target:
                hi = mid
            else:
                lo = mid
        sigma[i] = math.sqrt(lo * hi)
        solvable[i] = True
    return rho, sigma, solvable


def calibration_residual(distances, rho, sigma, k: Optional[int] = None) -> np.ndarray:
    D = np.asarray(distances, dtype=float)
    k = D.shape[1] if k is None else k
    sums = np.exp(-np.maximum(D - rho[:, None], 0.0) / sigma[:, None]).sum(axis=1)
    return np.abs(sums - math.log2(k))


def membership_graph(idx, dist, rho, sigma) -> sp.csr_matrix:
    n, k = idx.shape
    vals = np.exp(-np.maximum(dist - rho[:, None], 0.0) / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    return sp.csr_matrix((vals.ravel(), (rows, idx.ravel())), shape=(n, n))


def fuzzy_union(P) -> sp.csr_matrix:
    """w_ij = p_ij + p_ji - p_ij p_ji; symmetric, zero diagonal."""
    P = sp.csr_matrix(P, dtype=float)
    if P.nnz and (P.data.min() < 0 or P.data.max() > 1):
        raise DataError("membership weights must lie in [0, 1]")
    Pt = P.T.tocsr()
    W = (P + Pt - P.multiply(Pt)).tocsr()
    W.setdiag(0.0)
    W.eliminate_zeros()
    W.sort_indices()
    asym = abs(W - W.T)
    assert asym.nnz == 0 or asym.max() == 0.0
    return W


# --------------------------------------------------------------------------
# layout


def find_ab_params(spread: float = 1.0, min_dist: float = 0.0) -> tuple[float, float]:
    """Least-squares fit of 1/(1 + a d^(2b)) to the min_dist step curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(curve, xv, yv)
    return float(a), float(b)


def _sgd_kernel(
    Y, head, tail, epochs_per_sample, a, b, n_epochs, neg_rate, lr0, seed
):
    np.random.seed(seed)
    n_vertices = Y.shape[0]
    dim = Y.shape[1]
    n_edges = head.shape[0]
    epochs_per_neg = epochs_per_sample / neg_rate if neg_rate > 0 else epochs_per_sample * 0 + 1e300
    next_sample = epochs_per_sample.copy()
    next_neg = epochs_per_neg.copy()
    for epoch in range(n_epochs):
        alpha = lr0 * (1.0 - epoch / n_epochs)
        for e in numba.prange(n_edges):
            if next_sample[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2**b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                g = coeff * (Y[i, c] - Y[j, c])
                g = min(max(g, -4.0), 4.0)
                Y[i, c] += g * alpha
                Y[j, c] -= g * alpha
            next_sample[e] += epochs_per_sample[e]

            n_neg = int((epoch - next_neg[e]) / epochs_per_neg[e])
            for _ in range(n_neg):
                kk = np.random.randint(n_vertices)
                if kk == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = Y[i, c] - Y[kk, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = 2.0 * b / ((0.001 + d2) * (a * d2**b + 1.0))
                    for c in range(dim):
                        g = coeff * (Y[i, c] - Y[kk, c])
                        g = min(max(g, -4.0), 4.0)
                        Y[i, c] += g * alpha
            next_neg[e] += n_neg * epochs_per_neg[e]
    return Y


_sgd_serial = numba.njit(cache=True)(_sgd_kernel)
_sgd_parallel = numba.njit(cache=True, parallel=True)(_sgd_kernel)


def _spectral(W: sp.csr_matrix, dim: int) -> Optional[np.ndarray]:
    n = W.shape[0]
    if n <= dim + 1:
        return None
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        return None
    inv = sp.diags(1.0 / np.sqrt(deg))
    L = sp.identity(n) - inv @ W @ inv
    k = dim + 1
    try:
        if n < 2000:
            vals, vecs = np.linalg.eigh(L.toarray())
        else:
            vals, vecs = eigsh(
                L, k, which="SM", ncv=max(2 * k + 1, int(math.sqrt(n))),
                tol=1e-4, v0=np.ones(n), maxiter=n * 5,
            )
        order = np.argsort(vals)[1:k]
        coords = vecs[:, order]
    except Exception as exc:  # ARPACK / LAPACK failures
        log.warning("spectral initialization failed (%s); using random init", exc)
        return None
    if not np.all(np.isfinite(coords)):
        return None
    # eigenvector signs are arbitrary; pin them for determinism
    for c in range(coords.shape[1]):
        j = np.argmax(np.abs(coords[:, c]))
        if coords[j, c] < 0:
            coords[:, c] = -coords[:, c]
    return coords


def initialize(W: sp.csr_matrix, dim: int, seed: int) -> np.ndarray:
    """Spectral layout per connected component, components tiled on a grid;
    seeded uniform noise wherever the eigensolver cannot be used."""
    rng = np.random.default_rng(seed)
    n = W.shape[0]
    n_comp, comp = connected_components(W, directed=False)
    side = math.ceil(n_comp ** (1.0 / dim))
    Y = np.empty((n, dim))
    for c in range(n_comp):
        members = np.flatnonzero(comp == c)
        sub = W[members][:, members]
        init = _spectral(sub, dim)
        if init is None:
            init = rng.uniform(-1.0, 1.0, size=(members.size, dim))
        span = init.max(axis=0) - init.min(axis=0)
        span[span == 0] = 1.0
        init = (init - init.min(axis=0)) / span
        offset = np.array([(c // side**d) % side for d in range(dim)], dtype=float)
        Y[members] = init + 2.0 * offset
    Y = 10.0 * (Y - Y.min(axis=0)) / np.maximum(Y.max(axis=0) - Y.min(axis=0), 1e-12)
    Y += rng.normal(0.0, 1e-4, size=Y.shape)
    return Y


def optimize_layout(W, params: UmapParams, init: Optional[np.ndarray] = None) -> Embedding:
    """Negative-sampling SGD. Deterministic for a fixed seed unless
    ``params.parallel`` is set."""
    W = sp.csr_matrix(W)
    n = W.shape[0]
    if W.nnz == 0:
        raise DataError("cannot lay out an empty graph")
    n_epochs = params.n_epochs or (500 if n < 10_000 else 200)
    Wc = W.tocoo()
    keep = Wc.data >= Wc.data.max() / n_epochs
    head = Wc.row[keep].astype(np.int64)
    tail = Wc.col[keep].astype(np.int64)
    w = Wc.data[keep]
    eps = w.max() / w
    a, b = find_ab_params(params.spread, params.min_dist)
    Y = initialize(W, params.n_components, params.seed) if init is None else np.array(init, float)
    kernel = _sgd_parallel if params.parallel else _sgd_serial
    Y = kernel(
        np.ascontiguousarray(Y), head, tail, eps.astype(np.float64), a, b,
        int(n_epochs), int(params.negative_sample_rate), float(params.learning_rate),
        int(params.seed) % (2**32),
    )
    if not np.all(np.isfinite(Y)):
        raise DataError("layout produced non-finite coordinates")
    upper = sp.triu(W, k=1)
    return Embedding(
        coords=Y,
        params=replace(params, n_epochs=n_epochs),
        n_edges=int(upper.nnz),
        mean_edge_weight=float(upper.data.mean()) if upper.nnz else 0.0,
    )


def umap(X, params: UmapParams = UmapParams(), sample_ids=()) -> Embedding:
    """Fit a UMAP embedding of the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 3:
        raise DataError("UMAP needs a 2-D matrix with at least 3 rows")
    params = params.resolved(X.shape[0])
    k = params.n_neighbors
    idx, dist = knn_graph(X, k)
    rho, sigma, ok = smooth_knn(dist, k)
    resid = calibration_residual(dist, rho, sigma, k)
    assert np.all(resid[ok] <= CALIBRATION_TOL), float(resid[ok].max())
    W = fuzzy_union(membership_graph(idx, dist, rho, sigma))
    emb = optimize_layout(W, params)
    return replace(emb, sample_ids=tuple(sample_ids))

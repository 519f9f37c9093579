"""HDBSCAN over euclidean points, noise labeled -1. No randomness anywhere.

Mutual-reachability rows are computed on demand, so memory stays O(n)
while Prim's algorithm builds the spanning tree in O(n^2) time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import SCHEMA_VERSION
from .embed import knn_graph
from .errors import DataError

NOISE = -1


@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray
    n_clusters: int
    min_cluster_size: int
    min_samples: int
    stabilities: tuple[float, ...] = ()
    sample_ids: tuple[str, ...] = field(default=(), compare=False)

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels == NOISE)) if self.labels.size else 0.0

    def sizes(self) -> list[int]:
        return [int(np.sum(self.labels == c)) for c in range(self.n_clusters)]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": {"min_cluster_size": self.min_cluster_size, "min_samples": self.min_samples},
            "n_clusters": self.n_clusters,
            "stabilities": list(self.stabilities),
            "noise_fraction": self.noise_fraction,
            "sizes": self.sizes(),
        }

    def to_csv(self, path) -> None:
        ids = self.sample_ids or tuple(str(i) for i in range(self.labels.size))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "label"])
            w.writerows(zip(ids, self.labels.tolist()))


def load_clustering_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return tuple(r[0] for r in rows), np.array([int(r[1]) for r in rows], dtype=int)


def core_distances(X, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest neighbor, self excluded."""
    X = np.asarray(X, dtype=float)
    if not 1 <= min_samples < X.shape[0]:
        raise DataError(
            f"min_samples must satisfy 1 <= min_samples < n_samples ({X.shape[0]}), got {min_samples}"
        )
    _, dist = knn_graph(X, min_samples)
    return dist[:, -1].copy()


class MutualReachability:
    """d_mr(a, b) = max(core_a, core_b, |a - b|), evaluated row by row."""

    def __init__(self, X, core):
        self.X = np.asarray(X, dtype=float)
        self.core = np.asarray(core, dtype=float)
        if self.core.shape[0] != self.X.shape[0]:
            raise DataError("core distances do not match the data")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def row(self, i: int) -> np.ndarray:
        d = np.sqrt(((self.X - self.X[i]) ** 2).sum(axis=1))
        out = np.maximum(np.maximum(d, self.core), self.core[i])
        out[i] = 0.0
        return out

    def __call__(self, a: int, b: int) -> float:
        if a == b:
            return 0.0
        d = float(np.sqrt(((self.X[a] - self.X[b]) ** 2).sum()))
        return max(self.core[a], self.core[b], d)

    def dense(self) -> np.ndarray:
        return np.vstack([self.row(i) for i in range(self.n)])


def mutual_reachability(X, core) -> MutualReachability:
    return MutualReachability(X, core)


class _DenseRows:
    def __init__(self, D):
        self.D = np.asarray(D, dtype=float)
        self.n = self.D.shape[0]

    def row(self, i):
        return self.D[i]


def mst(d_mr) -> np.ndarray:
    """Minimum spanning tree as an (n-1, 3) array of (a, b, weight), a < b,
    sorted by (weight, a, b).

    Edges are compared by (weight, smaller index, larger index), a strict
    total order, so the tree is unique. ``d_mr`` is a MutualReachability or
    a dense symmetric matrix.
    """
    rows = d_mr if hasattr(d_mr, "row") else _DenseRows(d_mr)
    n = rows.n
    if n < 2:
        raise DataError("need at least 2 points for a spanning tree")
    in_tree = np.zeros(n, dtype=bool)
    kw = np.full(n, np.inf)
    ka = np.full(n, n, dtype=np.int64)
    kb = np.full(n, n, dtype=np.int64)
    idx = np.arange(n)
    edges = np.empty((n - 1, 3))
    u = 0
    in_tree[0] = True
    for step in range(n - 1):
        w = rows.row(u)
        ca = np.minimum(idx, u)
        cb = np.maximum(idx, u)
        better = (w < kw) | ((w == kw) & ((ca < ka) | ((ca == ka) & (cb < kb))))
        better &= ~in_tree
        kw[better] = w[better]
        ka[better] = ca[better]
        kb[better] = cb[better]
        cand = np.flatnonzero(~in_tree)
        cw = kw[cand]
        cand = cand[cw == cw.min()]
        if cand.size > 1:
            cand = cand[np.lexsort((kb[cand], ka[cand]))]
        v = int(cand[0])
        edges[step] = (ka[v], kb[v], kw[v])
        in_tree[v] = True
        u = v
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    return edges[order]


# --------------------------------------------------------------------------
# hierarchy


def _single_linkage(edges: np.ndarray, n: int):
    """Merge tree from sorted MST edges. Internal node n+i joins two roots."""
    parent = np.arange(2 * n - 1)
    left = np.empty(n - 1, dtype=np.int64)
    right = np.empty(n - 1, dtype=np.int64)
    size = np.ones(2 * n - 1, dtype=np.int64)
    dist = edges[:, 2].copy()

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for i, (a, b, _) in enumerate(edges):
        ra, rb = find(int(a)), find(int(b))
        node = n + i
        left[i], right[i] = ra, rb
        parent[ra] = parent[rb] = node
        size[node] = size[ra] + size[rb]
    return left, right, dist, size


def _leaves(node: int, n: int, left, right) -> list[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            stack.append(int(right[x - n]))
            stack.append(int(left[x - n]))
    return out


def _lambdas(dist: np.ndarray) -> np.ndarray:
    # zero-weight merges (duplicate points) would give infinite density
    pos = dist[dist > 0]
    floor = pos.min() * 1e-3 if pos.size else 1.0
    return 1.0 / np.maximum(dist, floor)


def condense(edges: np.ndarray, n: int, min_cluster_size: int):
    """Condensed tree rows (parent_cluster, child, lambda, child_size).

    child < n is a point falling out; child >= n is cluster (child - n).
    Cluster 0 is the root. Returns (rows, n_clusters, birth_lambda).
    """
    left, right, dist, size = _single_linkage(edges, n)
    lam = _lambdas(dist)
    rows = []
    birth = [0.0]
    stack = [(2 * n - 2, 0)]
    while stack:
        node, cid = stack.pop()
        i = node - n
        lnode, rnode = int(left[i]), int(right[i])
        ls, rs = int(size[lnode]), int(size[rnode])
        lv = float(lam[i])
        big_l, big_r = ls >= min_cluster_size, rs >= min_cluster_size
        if big_l and big_r:
            for child, csize in ((lnode, ls), (rnode, rs)):
                new = len(birth)
                birth.append(lv)
                rows.append((cid, n + new, lv, csize))
                if child >= n:
                    stack.append((child, new))
        else:
            for child, big in ((lnode, big_l), (rnode, big_r)):
                if big:
                    stack.append((child, cid))
                else:
                    rows.extend((cid, p, lv, 1) for p in _leaves(child, n, left, right))
    return rows, len(birth), np.array(birth)


def extract_clusters(edges, min_cluster_size: int, n: int | None = None, min_samples: int = 0):
    """Excess-of-mass selection over the condensed tree of a spanning tree."""
    edges = np.asarray(edges, dtype=float).reshape(-1, 3)
    n = edges.shape[0] + 1 if n is None else n
    if min_cluster_size < 2:
        raise DataError("min_cluster_size must be >= 2")
    if n < min_cluster_size or n < 2:
        return Clustering(np.full(n, NOISE), 0, min_cluster_size, min_samples)
    rows, n_cl, birth = condense(edges, n, min_cluster_size)

    stability = np.zeros(n_cl)
    children = [[] for _ in range(n_cl)]
    point_parent = np.zeros(n, dtype=np.int64)
    for parent, child, lv, csize in rows:
        stability[parent] += (lv - birth[parent]) * csize
        if child >= n:
            children[parent].append(child - n)
        else:
            point_parent[child] = parent

    # children always carry larger ids than their parent. The root competes
    # only when it never splits; otherwise one global cluster would swallow
    # real structure whenever the data are weakly separated.
    selected = np.zeros(n_cl, dtype=bool)
    subtree = np.zeros(n_cl)
    for c in range(n_cl - 1, -1, -1):
        child_sum = sum(subtree[k] for k in children[c])
        if not children[c] or (c != 0 and stability[c] >= child_sum):
            selected[c] = True
            subtree[c] = stability[c]
            stack = list(children[c])
            while stack:
                k = stack.pop()
                selected[k] = False
                stack.extend(children[k])
        else:
            subtree[c] = child_sum

    up = np.full(n_cl, -1, dtype=np.int64)
    for c in range(n_cl):
        for k in children[c]:
            up[k] = c
    chosen = np.flatnonzero(selected)
    label_of = {int(c): i for i, c in enumerate(chosen)}
    owner = np.full(n_cl, NOISE, dtype=np.int64)
    for c in range(n_cl):
        k = c
        while k != -1 and k not in label_of:
            k = int(up[k])
        owner[c] = NOISE if k == -1 else label_of[k]
    labels = owner[point_parent]
    return Clustering(
        labels=labels,
        n_clusters=len(chosen),
        min_cluster_size=min_cluster_size,
        min_samples=min_samples,
        stabilities=tuple(float(stability[c]) for c in chosen),
    )


def hdbscan(X, min_cluster_size: int = 20, min_samples: int = 10, sample_ids=()) -> Clustering:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("HDBSCAN needs at least 2 points")
    core = core_distances(X, min_samples)
    edges = mst(mutual_reachability(X, core))
    c = extract_clusters(edges, min_cluster_size, X.shape[0], min_samples)
    return Clustering(
        c.labels, c.n_clusters, c.min_cluster_size, c.min_samples, c.stabilities, tuple(sample_ids)
    )

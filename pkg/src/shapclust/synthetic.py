"""Planted-structure datasets for tests, acceptance checks and demos."""

from __future__ import annotations

import numpy as np

from .core import Dataset
from .features import COMPONENTS, Cycle


def blobs(n_per=200, centers=((0.0, 0.0), (5.0, 0.0), (0.0, 5.0)), sigma=0.1, seed=0):
    """Isotropic Gaussian blobs; returns (X, true labels)."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([rng.normal(c, sigma, size=(n_per, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return X, y


def semi_supervised_benchmark(
    n=2000,
    n_features=8,
    minority_fraction=0.02,
    labeled_fraction=0.02,
    n_regimes=12,
    regime_spread=2.0,
    tail_df=5.0,
    fault_shift=14.0,
    seed=0,
):
    """Imbalanced 3-class data whose raw geometry is dominated by nuisance
    structure unrelated to the class.

    Features 2.. hold overlapping operating regimes with heavy-tailed
    (Student-t) spread, which leaves plenty of diffuse, hard-to-cluster
    samples. A fault adds ``fault_shift`` to feature 0 (Fault1) or feature 1
    (Fault2). Half the labeled budget goes to faults, split evenly, the way
    an expert would flag anomalies first.

    Returns (dataset with partial labels, full ground-truth label array).
    """
    rng = np.random.default_rng(seed)
    n_minor = int(round(minority_fraction * n))
    n_normal = n - 2 * n_minor
    truth = np.array(["Normal"] * n_normal + ["Fault1"] * n_minor + ["Fault2"] * n_minor)
    centers = rng.normal(0.0, regime_spread, size=(n_regimes, n_features - 2))
    X = rng.normal(0.0, 1.0, size=(n, n_features))
    X[:, 2:] = rng.standard_t(tail_df, size=(n, n_features - 2))
    X[:, 2:] += centers[rng.integers(0, n_regimes, size=n)]
    X[truth == "Fault1", 0] += fault_shift
    X[truth == "Fault2", 1] += fault_shift

    perm = rng.permutation(n)
    X, truth = X[perm], truth[perm]

    n_lab = max(3, int(round(labeled_fraction * n)))
    per_fault = n_lab // 4
    labeled = []
    for cls, k in (("Fault1", per_fault), ("Fault2", per_fault), ("Normal", n_lab - 2 * per_fault)):
        idx = np.flatnonzero(truth == cls)
        labeled.extend(rng.choice(idx, size=min(k, idx.size), replace=False).tolist())
    labeled = set(labeled)
    labels = tuple(truth[i] if i in labeled else None for i in range(n))
    names = tuple(f"f{j}" for j in range(n_features))
    ids = tuple(f"s{i:05d}" for i in range(n))
    return Dataset(names, X, labels, ids), truth


def planted_rule(n=600, n_features=6, feature=3, threshold=0.0, margin=0.5, seed=0):
    """y = [x_feature <= threshold], with no samples inside the margin band
    (threshold - margin/2, threshold + margin/2) on that feature."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.5, size=(n, n_features))
    col = X[:, feature]
    half = margin / 2.0
    inside = np.abs(col - threshold) < half
    # shift band members outward by half the margin, keeping their side
    col[inside] += np.where(col[inside] <= threshold, -half, half)
    X[:, feature] = col
    y = col <= threshold
    names = tuple(f"f{j}" for j in range(n_features))
    return Dataset(names, X), y


# Table 2 operating conditions (W) and sensed measurements (X_s)
SIGNALS = (
    "alt", "Mach", "TRA", "T2",
    "Wf", "Nf", "Nc", "T24", "T30", "T48", "T50",
    "P15", "P2", "P21", "P24", "Ps30", "P40", "P50",
)


def synthetic_fleet(n_units=12, max_cycles=60, length=40, seed=0, signals=SIGNALS):
    """Run-to-failure cycles with component-specific sensor drift.

    Each unit is assigned one failing component. Health state flips from
    healthy (1) to unhealthy (0) at a unit-specific onset cycle, after which
    the failing component's sensors drift. RUL counts cycles to end of life.
    """
    rng = np.random.default_rng(seed)
    signals = tuple(signals)
    drift_map = {
        "fan": ("Nf", "P21"),
        "lpc": ("T24", "P24"),
        "hpc": ("T30", "Ps30"),
        "hpt": ("T48", "P40"),
        "lpt": ("T50", "P50"),
    }
    base_level = {s: rng.uniform(1.0, 100.0) for s in signals}
    cycles = []
    for u in range(n_units):
        comp = COMPONENTS[u % len(COMPONENTS)]
        eol = int(rng.integers(max_cycles // 2, max_cycles + 1))
        onset = int(rng.integers(eol // 4, eol // 2))
        for c in range(1, eol + 1):
            t = np.linspace(0.0, 1.0, length)
            degraded = c >= onset
            sev = max(0, c - onset) / max(1, eol - onset)
            fc = int(rng.integers(1, 4))
            sig = {}
            for s in signals:
                level = base_level[s] * (1.0 + 0.1 * fc)
                x = level + 0.05 * level * np.sin(2 * np.pi * t * (1 + fc)) + rng.normal(
                    0, 0.01 * level, length
                )
                if degraded and s in drift_map[comp]:
                    x = x + 0.3 * level * sev
                sig[s] = x
            cycles.append(
                Cycle(
                    signals=sig,
                    cycle=float(c),
                    flight_class=float(fc),
                    unit=str(u + 1),
                    health_state=0.0 if degraded else 1.0,
                    failures={k: float(k == comp) for k in COMPONENTS},
                    rul=float(eol - c),
                )
            )
    return cycles

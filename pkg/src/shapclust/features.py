"""Per-cycle time-series summaries for the turbofan prognostics setting.

Each signal is reduced to 7 statistics, and three cycle-level auxiliaries
(cycle number, flight class, duration in samples) are appended.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Dataset
from .errors import DataError

STATS = ("mean", "std", "min", "q1", "median", "q3", "max")
AUX = ("cycle", "flight_class", "duration")
COMPONENTS = ("fan", "lpc", "hpc", "hpt", "lpt")
TARGET_NAMES = ("health_state", *(f"{c}_failure" for c in COMPONENTS), "rul")


@dataclass(frozen=True)
class Cycle:
    signals: Mapping[str, np.ndarray]
    cycle: float
    flight_class: float
    unit: Optional[str] = None
    health_state: Optional[float] = None
    failures: Mapping[str, float] = field(default_factory=dict)
    rul: Optional[float] = None

    def __post_init__(self):
        sig = {str(k): np.asarray(v, dtype=float).ravel() for k, v in self.signals.items()}
        if not sig:
            raise DataError("cycle has no signals")
        lengths = {k: v.size for k, v in sig.items()}
        for k, v in sig.items():
            if v.size == 0:
                raise DataError(f"signal {k!r} is empty")
            if not np.all(np.isfinite(v)):
                raise DataError(f"signal {k!r} contains NaN or inf")
        if len(set(lengths.values())) != 1:
            raise DataError(f"signals are not time-aligned: lengths {lengths}")
        object.__setattr__(self, "signals", sig)

    @property
    def length(self) -> int:
        return next(iter(self.signals.values())).size

    def target_vector(self) -> Optional[np.ndarray]:
        if self.health_state is None or self.rul is None:
            return None
        if any(c not in self.failures for c in COMPONENTS):
            return None
        return np.array(
            [self.health_state, *(self.failures[c] for c in COMPONENTS), self.rul],
            dtype=float,
        )


def series_stats(x: np.ndarray) -> np.ndarray:
    """mean, population std, min, Q1, median, Q3, max.

    Quantiles interpolate linearly between order statistics at p*(n-1).
    """
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return np.array([x.mean(), x.std(), q[0], q[1], q[2], q[3], q[4]])


def feature_names_for(signal_names: Sequence[str]) -> list[str]:
    return [f"{s}_{st}" for s in signal_names for st in STATS] + list(AUX)


def featurize_cycle(c: Cycle, signal_order: Optional[Sequence[str]] = None):
    """Return (names, values) with 7 * n_signals + 3 entries."""
    order = list(signal_order) if signal_order is not None else list(c.signals)
    if set(order) != set(c.signals):
        raise DataError("signal order does not match cycle signals")
    values = [series_stats(c.signals[s]) for s in order]
    values.append(np.array([c.cycle, c.flight_class, float(c.length)]))
    names = feature_names_for(order)
    out = np.concatenate(values)
    assert out.size == len(names) == 7 * len(order) + 3
    return names, out


def featurize_fleet(cycles: Sequence[Cycle]) -> tuple[Dataset, Optional[Dataset]]:
    """One feature row per cycle, plus the 7-column target table when every
    cycle carries complete targets (otherwise None)."""
    if not cycles:
        raise DataError("no cycles to featurize")
    order = list(cycles[0].signals)
    rows, ids, targets = [], [], []
    for i, c in enumerate(cycles):
        if set(c.signals) != set(order):
            missing = sorted(set(order) - set(c.signals))
            extra = sorted(set(c.signals) - set(order))
            raise DataError(
                f"cycle {i} (unit={c.unit}, cycle={c.cycle:g}) has mismatched signals: "
                f"missing {missing}, extra {extra}"
            )
        names, v = featurize_cycle(c, order)
        rows.append(v)
        unit = c.unit if c.unit is not None else "u"
        ids.append(f"{unit}_c{c.cycle:g}_{i}")
        targets.append(c.target_vector())
    data = Dataset(tuple(names), np.vstack(rows), None, tuple(ids))
    if any(t is None for t in targets):
        return data, None
    return data, Dataset(TARGET_NAMES, np.vstack(targets), None, tuple(ids))


def load_cycle(csv_path) -> Cycle:
    """Read a cycle CSV (one column per signal) and its JSON sidecar."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise DataError(f"no such cycle file: {csv_path}")
    with csv_path.open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if r]
    if len(records) < 2:
        raise DataError(f"{csv_path}: need a header and at least one sample")
    header = [h.strip() for h in records[0]]
    try:
        data = np.array([[float(v) for v in r] for r in records[1:]])
    except ValueError as exc:
        raise DataError(f"{csv_path}: {exc}") from None
    if data.shape[1] != len(header):
        raise DataError(f"{csv_path}: ragged rows")
    side = csv_path.with_suffix(".json")
    meta = json.loads(side.read_text(encoding="utf-8")) if side.is_file() else {}
    return Cycle(
        signals={h: data[:, j] for j, h in enumerate(header)},
        cycle=float(meta.get("cycle", 0)),
        flight_class=float(meta.get("flight_class", 0)),
        unit=None if meta.get("unit") is None else str(meta["unit"]),
        health_state=meta.get("health_state"),
        failures=meta.get("failures", {}),
        rul=meta.get("rul"),
    )


def save_cycle(c: Cycle, csv_path) -> None:
    csv_path = Path(csv_path)
    names = list(c.signals)
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for t in range(c.length):
            w.writerow([f"{c.signals[s][t]:.17g}" for s in names])
    meta = {
        "unit": c.unit,
        "cycle": c.cycle,
        "flight_class": c.flight_class,
        "health_state": c.health_state,
        "failures": dict(c.failures),
        "rul": c.rul,
    }
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_manifest(path) -> list[Cycle]:
    """A manifest lists one cycle CSV per line, relative to its own directory."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such manifest: {path}")
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    return [load_cycle(path.parent / ln) for ln in lines if ln and not ln.startswith("#")]

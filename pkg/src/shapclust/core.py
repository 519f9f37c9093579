"""Tabular datasets, CSV ingestion, invertible normalization and splitting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

SCHEMA_VERSION = 1

# Unlabeled entries are None; no class string ever stands in for "unknown".
UNKNOWN = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Samples x named features, with optional (possibly partial) labels."""

    feature_names: tuple[str, ...]
    rows: np.ndarray
    labels: Optional[tuple[Optional[str], ...]] = None
    sample_ids: tuple[str, ...] = ()

    def __post_init__(self):
        names = tuple(str(n) for n in self.feature_names)
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1 and len(names) > 0 and rows.size == 0:
            rows = rows.reshape(0, len(names))
        if rows.ndim != 2:
            raise DataError(f"rows must be 2-D, got shape {rows.shape}")
        if any(n == "" for n in names):
            raise DataError("feature names must be nonempty")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate feature names: {dupes}")
        if rows.shape[1] != len(names):
            raise DataError(
                f"rows have {rows.shape[1]} columns but {len(names)} feature names"
            )
        if not np.all(np.isfinite(rows)):
            i, j = np.argwhere(~np.isfinite(rows))[0]
            raise DataError(f"non-finite value at (row {i}, col {names[j]})")
        ids = tuple(str(s) for s in self.sample_ids) or tuple(
            str(i) for i in range(rows.shape[0])
        )
        if len(ids) != rows.shape[0]:
            raise DataError("sample_ids length does not match number of rows")
        if len(set(ids)) != len(ids):
            raise DataError("sample_ids must be unique")
        labels = self.labels
        if labels is not None:
            labels = tuple(None if lab is None else str(lab) for lab in labels)
            if len(labels) != rows.shape[0]:
                raise DataError("labels length does not match number of rows")
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def take(self, index: Sequence[int]) -> "Dataset":
        index = np.asarray(index, dtype=int)
        labels = None if self.labels is None else tuple(self.labels[i] for i in index)
        return Dataset(
            self.feature_names,
            self.rows[index],
            labels,
            tuple(self.sample_ids[i] for i in index),
        )

    def with_rows(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.feature_names, rows, self.labels, self.sample_ids)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.feature_names.index(name)]
        except ValueError:
            raise DataError(f"no feature named {name!r}") from None

    def labeled_mask(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(self.n_samples, dtype=bool)
        return np.array([lab is not None for lab in self.labels], dtype=bool)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_names": list(self.feature_names),
            "sample_ids": list(self.sample_ids),
            "rows": self.rows.tolist(),
            "labels": None if self.labels is None else list(self.labels),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        _check_schema(doc)
        rows = np.asarray(doc["rows"], dtype=float).reshape(-1, len(doc["feature_names"]))
        labels = doc.get("labels")
        return cls(
            tuple(doc["feature_names"]),
            rows,
            None if labels is None else tuple(labels),
            tuple(doc["sample_ids"]),
        )


def _check_schema(doc: dict) -> None:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(
            f"unsupported schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )


def load_csv(
    path,
    has_header: bool = True,
    label_column: Optional[str] = None,
    id_column: Optional[str] = None,
    drop_columns: Sequence[str] = (),
) -> Dataset:
    """Read a numeric CSV. Empty label cells become UNKNOWN; columns in
    ``drop_columns`` are skipped entirely."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if r]
    if not records:
        raise DataError(f"{path}: empty file")
    if has_header:
        header, records = [h.strip() for h in records[0]], records[1:]
    else:
        header = [f"x{j}" for j in range(len(records[0]))]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"{path}: duplicate header names {dupes}")
    for special in (label_column, id_column, *drop_columns):
        if special is not None and special not in header:
            raise DataError(f"{path}: column {special!r} not in header")

    skip = {label_column, id_column, *drop_columns}
    feat_cols = [j for j, h in enumerate(header) if h not in skip]
    rows = np.empty((len(records), len(feat_cols)))
    labels: list[Optional[str]] = []
    ids: list[str] = []
    for i, rec in enumerate(records, start=1):
        if len(rec) != len(header):
            raise DataError(
                f"{path}: ragged row {i}: {len(rec)} cells, expected {len(header)}"
            )
        for k, j in enumerate(feat_cols):
            try:
                v = float(rec[j])
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {rec[j]!r} at (row {i}, col {header[j]})"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite cell at (row {i}, col {header[j]})")
            rows[i - 1, k] = v
        if label_column is not None:
            cell = rec[header.index(label_column)].strip()
            labels.append(cell if cell else UNKNOWN)
        if id_column is not None:
            ids.append(rec[header.index(id_column)])
    return Dataset(
        tuple(header[j] for j in feat_cols),
        rows,
        tuple(labels) if label_column is not None else None,
        tuple(ids),
    )


def read_column(path, name: str) -> tuple[Optional[str], ...]:
    """One column of a headered CSV as strings; empty cells become UNKNOWN."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or name not in reader.fieldnames:
            raise DataError(f"{path}: column {name!r} not in header")
        return tuple((r[name] or "").strip() or UNKNOWN for r in reader)


def write_csv(d: Dataset, path, label_column: str = "label", id_column: str = "sample_id") -> None:
    """Write with ids first and labels last; floats at 17 significant digits."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [id_column, *d.feature_names]
        if d.labels is not None:
            header.append(label_column)
        w.writerow(header)
        for i in range(d.n_samples):
            rec = [d.sample_ids[i], *(f"{v:.17g}" for v in d.rows[i])]
            if d.labels is not None:
                rec.append("" if d.labels[i] is None else d.labels[i])
            w.writerow(rec)


@dataclass(frozen=True)
class NormParams:
    """Per-feature statistics: (mean, std) for zscore, (min, max) for minmax."""

    method: str
    feature_names: tuple[str, ...]
    loc: np.ndarray
    scale: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.method not in ("zscore", "minmax"):
            raise DataError(f"unknown normalization method {self.method!r}")
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "loc", _frozen(self.loc))
        object.__setattr__(self, "scale", _frozen(self.scale))

    @property
    def stats(self) -> list[tuple[float, float]]:
        if self.method == "zscore":
            return list(zip(self.loc.tolist(), self.scale.tolist()))
        return list(zip(self.loc.tolist(), (self.loc + self.scale).tolist()))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "feature_names": list(self.feature_names),
            "stats": [list(s) for s in self.stats],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NormParams":
        _check_schema(doc)
        s = np.asarray(doc["stats"], dtype=float).reshape(-1, 2)
        scale = s[:, 1] if doc["method"] == "zscore" else s[:, 1] - s[:, 0]
        return cls(doc["method"], tuple(doc["feature_names"]), s[:, 0], scale)


def fit_normalizer(d: Dataset, method: str = "zscore") -> NormParams:
    """zscore uses the population standard deviation (ddof=0)."""
    if d.n_samples < 1:
        raise DataError("cannot fit a normalizer on an empty dataset")
    if method == "zscore":
        return NormParams(method, d.feature_names, d.rows.mean(axis=0), d.rows.std(axis=0))
    if method == "minmax":
        lo = d.rows.min(axis=0)
        return NormParams(method, d.feature_names, lo, d.rows.max(axis=0) - lo)
    raise DataError(f"unknown normalization method {method!r}")


def _check_names(d: Dataset, p: NormParams) -> None:
    if d.feature_names != p.feature_names:
        raise DataError("dataset feature names do not match normalizer")


def apply_normalizer(d: Dataset, p: NormParams) -> Dataset:
    _check_names(d, p)
    safe = np.where(p.scale > 0, p.scale, 1.0)
    out = np.where(p.scale > 0, (d.rows - p.loc) / safe, 0.0)
    return d.with_rows(out)


def invert_normalizer(d: Dataset, p: NormParams) -> Dataset:
    _check_names(d, p)
    return d.with_rows(d.rows * p.scale + p.loc)


def split(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random train/test partition with round(test_fraction * n) test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = d.n_samples
    if n < 2:
        raise DataError("need at least 2 samples to split")
    n_test = min(max(int(math.floor(test_fraction * n + 0.5)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return d.take(train_idx), d.take(test_idx)


def save_json(obj, path) -> None:
    doc = obj.to_json() if hasattr(obj, "to_json") else obj
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

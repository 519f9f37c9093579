"""Config-driven runs of the three supervision modes.

unsupervised     normalize -> UMAP -> HDBSCAN
semi_supervised  train on the labeled rows -> attribute every row -> UMAP on
                 attributions -> HDBSCAN (-> rules, if configured)
supervised       split -> train -> per target: attribute the test rows ->
                 importance -> UMAP -> HDBSCAN -> rules in original units

Every stage writes JSON and CSV artifacts into the run directory, and a
manifest lists each file with its sha256.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import plotting
from .cluster import Clustering, hdbscan, load_clustering_csv
from .core import (
    SCHEMA_VERSION,
    Dataset,
    apply_normalizer,
    fit_normalizer,
    load_csv,
    read_column,
    save_json,
    split,
)
from .embed import UmapParams, umap
from .errors import ConfigError, DataError, ShapclustError
from .metrics import fmt, nasa_score, nmi, rmse
from .model import (
    MLP,
    PROBABILITY,
    REGRESSION,
    MlpSpec,
    ReportRow,
    class_display_names,
    classification_report,
    multiclass_report,
    train_mlp,
)
from .rules import describe_clusters, rules_csv, rules_markdown
from .shapley import PREDICTED_CLASS, attribute_dataset, global_importance, sample_background

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SUMMARY = "summary.json"


# --------------------------------------------------------------------------
# configuration


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InputConfig(_Block):
    data: Path
    id_column: Optional[str] = None
    label_column: Optional[str] = None
    # ground truth used only for evaluation, never for training
    truth_column: Optional[str] = None
    targets: Optional[Path] = None
    targets_id_column: Optional[str] = "sample_id"


class NormalizationConfig(_Block):
    method: Literal["zscore", "minmax", "none"] = "zscore"


class ModelConfig(_Block):
    hidden: list[int] = [64, 32]
    activation: Literal["relu", "tanh"] = "relu"
    epochs: int = 200
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    loss_weights: Optional[list[float]] = None
    outputs: Optional[list[str]] = None
    regression_outputs: list[str] = ["rul"]
    test_fraction: float = 0.2
    seed: Optional[int] = None


class ShapleyConfig(_Block):
    estimator: Literal["mc_permutation", "exact"] = "mc_permutation"
    m: int = 60
    background_cap: int = 100
    background_seed: Optional[int] = None
    # semi_supervised: explain this output instead of the predicted class
    output: Optional[str] = None
    seed: Optional[int] = None


class UmapConfig(_Block):
    n_neighbors: int = 200
    min_dist: float = 0.0
    n_components: int = 2
    n_epochs: Optional[int] = None
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    spread: float = 1.0
    parallel: bool = False
    seed: Optional[int] = None


class HdbscanConfig(_Block):
    min_cluster_size: int = 20
    min_samples: int = 10


class RulesConfig(_Block):
    min_precision: float = 0.6
    min_recall: float = 0.3
    n_trees: int = 30
    top_k: int = 10
    seed: Optional[int] = None
    threshold: float = 0.5
    # probability outputs clustered over all test rows rather than only
    # the predicted-positive ones
    all_rows_outputs: list[str] = ["health_state"]


class OutputConfig(_Block):
    dir: Path
    plots: bool = True


class PipelineConfig(_Block):
    mode: Literal["unsupervised", "semi_supervised", "supervised"]
    seed: int = 0
    threads: int = 1
    input: InputConfig
    normalization: NormalizationConfig = NormalizationConfig()
    model: Optional[ModelConfig] = None
    shapley: Optional[ShapleyConfig] = None
    umap: UmapConfig = UmapConfig()
    hdbscan: HdbscanConfig = HdbscanConfig()
    rules: Optional[RulesConfig] = None
    output: OutputConfig

    @model_validator(mode="after")
    def _mode_consistency(self):
        if self.mode == "unsupervised":
            for name in ("model", "shapley", "rules"):
                if getattr(self, name) is not None:
                    raise ValueError(f"{name}: block not allowed in unsupervised mode")
        else:
            if self.model is None:
                self.model = ModelConfig()
            if self.shapley is None:
                self.shapley = ShapleyConfig()
        if self.mode == "semi_supervised" and not self.input.label_column:
            raise ValueError("input.label_column: required in semi_supervised mode")
        if self.mode == "supervised":
            if self.input.targets is None:
                raise ValueError("input.targets: required in supervised mode")
            if self.rules is None:
                self.rules = RulesConfig()
        if self.threads < 1:
            raise ValueError("threads: must be >= 1")
        return self

    def stage_seed(self, block) -> int:
        s = getattr(block, "seed", None) if block is not None else None
        return self.seed if s is None else s


def _validation_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc and not msg.startswith(loc) else msg)
    return "; ".join(parts)


def parse_config(doc: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    """Validate a config mapping; relative paths resolve against base_dir."""
    try:
        cfg = PipelineConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc)) from None
    if base_dir is not None:
        base = Path(base_dir)
        inp = cfg.input
        inp.data = base / inp.data
        if inp.targets is not None:
            inp.targets = base / inp.targets
        cfg.output.dir = base / cfg.output.dir
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, path.parent)


# --------------------------------------------------------------------------
# run bookkeeping


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Run directory plus the bookkeeping needed for the manifest."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.dir = Path(cfg.output.dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.stage = "setup"
        self.seeds: dict[str, int] = {}
        self.summary: dict = {"schema_version": SCHEMA_VERSION, "mode": cfg.mode, "results": []}

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def json(self, name: str, obj) -> Path:
        p = self.path(name)
        save_json(obj, p)
        return p

    @contextmanager
    def in_stage(self, name: str):
        self.stage = name
        log.info("stage %s", name)
        yield

    def write_manifest(self, status: str, error: Optional[str] = None) -> Path:
        self.json(SUMMARY, self.summary)
        files = sorted(
            p for p in self.dir.rglob("*") if p.is_file() and p.name != MANIFEST
        )
        doc = {
            "schema_version": SCHEMA_VERSION,
            "mode": self.cfg.mode,
            "status": status,
            "failed_stage": None if status == "ok" else self.stage,
            "error": error,
            "seeds": self.seeds,
            "config": self.cfg.model_dump(mode="json"),
            "artifacts": {p.relative_to(self.dir).as_posix(): sha256_file(p) for p in files},
        }
        return self.json(MANIFEST, doc)


# --------------------------------------------------------------------------
# shared stages


def _load_features(cfg: PipelineConfig) -> tuple[Dataset, Optional[np.ndarray]]:
    inp = cfg.input
    drop = [inp.truth_column] if inp.truth_column else []
    data = load_csv(inp.data, True, inp.label_column, inp.id_column, drop)
    truth = None
    if inp.truth_column:
        truth = np.array(read_column(inp.data, inp.truth_column), dtype=object)
    return data, truth


def _normalizer(run: Run, fit_on: Dataset):
    """Fitted normalizer as a callable; identity when disabled."""
    method = run.cfg.normalization.method
    if method == "none":
        return lambda d: d
    params = fit_normalizer(fit_on, method)
    run.json("normalization.json", params.to_json())
    return lambda d: apply_normalizer(d, params)


def _umap_params(cfg: PipelineConfig) -> UmapParams:
    u = cfg.umap
    return UmapParams(
        n_neighbors=u.n_neighbors,
        min_dist=u.min_dist,
        n_components=u.n_components,
        n_epochs=u.n_epochs,
        negative_sample_rate=u.negative_sample_rate,
        learning_rate=u.learning_rate,
        spread=u.spread,
        parallel=u.parallel,
        seed=cfg.stage_seed(u),
    )


def _embed_and_cluster(run: Run, X: np.ndarray, ids, prefix: str):
    cfg = run.cfg
    with run.in_stage(f"{prefix}umap"):
        params = _umap_params(cfg)
        run.seeds[f"{prefix}umap"] = params.seed
        emb = umap(X, params, ids)
        run.json(f"{prefix}embedding.json", emb.to_json())
        emb.to_csv(run.path(f"{prefix}embedding.csv"))
    with run.in_stage(f"{prefix}hdbscan"):
        h = cfg.hdbscan
        ms = min(h.min_samples, X.shape[0] - 1)
        cl = hdbscan(emb.coords, h.min_cluster_size, ms, ids)
        run.json(f"{prefix}clustering.json", cl.to_json())
        cl.to_csv(run.path(f"{prefix}clustering.csv"))
    return emb, cl


def _cluster_summary(name: str, cl: Clustering, prefix: str, truth=None, **extra) -> dict:
    out = {
        "target": name,
        "clustering_csv": f"{prefix}clustering.csv",
        "n_samples": int(cl.labels.size),
        "n_clusters": cl.n_clusters,
        "noise_fraction": cl.noise_fraction,
        "nmi_vs_truth": None if truth is None else nmi(cl.labels, truth),
    }
    out.update(extra)
    return out


def _report_rows_json(rows: list[ReportRow]) -> list[dict]:
    return [r.__dict__.copy() for r in rows]


def _train(run: Run, train: Dataset, targets: Dataset, outputs, kinds) -> MLP:
    m = run.cfg.model
    seed = run.cfg.stage_seed(m)
    run.seeds["model"] = seed
    spec = MlpSpec(
        hidden=m.hidden,
        output_names=outputs,
        output_kinds=kinds,
        loss_weights=m.loss_weights,
        activation=m.activation,
        epochs=m.epochs,
        learning_rate=m.learning_rate,
        momentum=m.momentum,
        batch_size=m.batch_size,
        seed=seed,
    )
    net = train_mlp(train, targets, spec)
    run.json("model.json", net.to_json())
    return net


def _background(run: Run, pool: Dataset):
    s = run.cfg.shapley
    seed = s.background_seed if s.background_seed is not None else run.cfg.seed
    run.seeds["background"] = seed
    return sample_background(pool, s.background_cap, seed)


# --------------------------------------------------------------------------
# modes


def _unsupervised(run: Run) -> None:
    cfg = run.cfg
    with run.in_stage("load"):
        data, truth = _load_features(cfg)
    with run.in_stage("normalize"):
        Xn = _normalizer(run, data)(data)
    emb, cl = _embed_and_cluster(run, Xn.rows, data.sample_ids, "")
    run.summary["results"].append(_cluster_summary("features", cl, "", truth))
    if cfg.output.plots:
        with run.in_stage("plots"):
            plotting.plot_embedding(emb.coords, cl.labels, run.path("embedding_clusters.svg"),
                                    title="UMAP + HDBSCAN")
            if truth is not None:
                plotting.plot_embedding(emb.coords, _str_labels(truth),
                                        run.path("embedding_truth.svg"), title="true classes")


def _str_labels(values) -> np.ndarray:
    return np.array(["unknown" if v is None else str(v) for v in values], dtype=object)


def _semi_supervised(run: Run) -> None:
    cfg = run.cfg
    with run.in_stage("load"):
        data, truth = _load_features(cfg)
        lab = data.labeled_mask()
        if lab.sum() < 2:
            raise DataError("semi_supervised mode needs at least 2 labeled rows")
        classes = sorted({v for v in data.labels if v is not None})
        if len(classes) < 2:
            raise DataError("semi_supervised mode needs at least 2 label classes")
    with run.in_stage("normalize"):
        Xn = _normalizer(run, data)(data)
        train = Xn.take(np.flatnonzero(lab))
    with run.in_stage("train"):
        outputs = tuple(f"class_{c}" for c in classes)
        Y = np.array([[float(v == c) for c in classes] for v in train.labels])
        targets = Dataset(outputs, Y, None, train.sample_ids)
        net = _train(run, train, targets, outputs, (PROBABILITY,) * len(outputs))
        report = {"labeled": _report_rows_json(multiclass_report(net, train, train.labels, outputs))}
        if truth is not None:
            report["truth"] = _report_rows_json(multiclass_report(net, Xn, truth, outputs))
        run.json("classification.json", report)
    with run.in_stage("explain"):
        s = cfg.shapley
        bg, bg_desc = _background(run, train)
        seed = cfg.stage_seed(s)
        run.seeds["shapley"] = seed
        output = s.output or PREDICTED_CLASS
        attr = attribute_dataset(net, Xn, bg, output, s.m, seed, s.estimator, cfg.threads,
                                 outputs, bg_desc)
        run.json("attributions.json", attr.to_json())
        attr.to_csv(run.path("attributions.csv"))
        ranked = global_importance(attr)
        _write_importance(run, ranked, "importance.csv")
    emb, cl = _embed_and_cluster(run, attr.phi, data.sample_ids, "")
    pred = np.asarray(outputs)[np.argmax(net.predict_batch(Xn.rows), axis=1)]
    pred = np.array([o[len("class_"):] for o in pred], dtype=object)
    extra = {"labeled_fraction": float(lab.mean())}
    if cfg.rules is not None:
        with run.in_stage("rules"):
            _rules_for(run, cl, data, ranked, "", "Predicted class")
            extra["rules_md"] = "rules.md"
    run.summary["results"].append(_cluster_summary("predicted_class", cl, "", truth, **extra))
    if cfg.output.plots:
        with run.in_stage("plots"):
            plotting.plot_embedding(emb.coords, cl.labels, run.path("embedding_clusters.svg"),
                                    title="Shapley UMAP + HDBSCAN")
            plotting.plot_embedding(emb.coords, pred, run.path("embedding_predicted.svg"),
                                    title="predicted class")
            plotting.plot_importance(ranked, run.path("importance.svg"))


def _write_importance(run: Run, ranked, name: str) -> None:
    with run.path(name).open("w", encoding="utf-8") as fh:
        fh.write("feature,mean_abs_phi\n")
        for f, v in ranked:
            fh.write(f"{f},{v:.17g}\n")


def _rules_for(run: Run, cl: Clustering, original: Dataset, ranked, prefix: str, prediction: str):
    r = run.cfg.rules
    seed = run.cfg.stage_seed(r)
    run.seeds[f"{prefix}rules"] = seed
    desc = describe_clusters(cl, original, ranked, r.min_precision, r.min_recall, seed,
                             r.n_trees, r.top_k, prediction)
    run.path(f"{prefix}rules.md").write_text(rules_markdown(desc), encoding="utf-8")
    rules_csv(desc, run.path(f"{prefix}rules.csv"))
    return desc


def _display_name(output: str) -> str:
    if output == "health_state":
        return "Health State"
    if output.endswith("_failure"):
        return class_display_names(output)[1]
    return output.upper() if len(output) <= 4 else output


def _supervised(run: Run) -> None:
    cfg = run.cfg
    inp = cfg.input
    with run.in_stage("load"):
        data, _ = _load_features(cfg)
        tgt = load_csv(inp.targets, True, None, inp.targets_id_column)
        if tgt.n_samples != data.n_samples:
            raise DataError(
                f"targets have {tgt.n_samples} rows, features have {data.n_samples}"
            )
        if inp.id_column and inp.targets_id_column and tgt.sample_ids != data.sample_ids:
            raise DataError("feature and target sample ids differ")
        tgt = Dataset(tgt.feature_names, tgt.rows, None, data.sample_ids)
        m = cfg.model
        outputs = tuple(m.outputs or tgt.feature_names)
        missing = [o for o in outputs if o not in tgt.feature_names]
        if missing:
            raise DataError(f"targets lack outputs {missing}")
        kinds = tuple(REGRESSION if o in m.regression_outputs else PROBABILITY for o in outputs)
    with run.in_stage("split"):
        run.seeds["split"] = cfg.seed
        train_raw, test_raw = split(data, m.test_fraction, cfg.seed)
        pos = {sid: i for i, sid in enumerate(data.sample_ids)}
        y_train = tgt.take([pos[s] for s in train_raw.sample_ids])
        y_test = tgt.take([pos[s] for s in test_raw.sample_ids])
    with run.in_stage("normalize"):
        norm = _normalizer(run, train_raw)
        train, test = norm(train_raw), norm(test_raw)
    with run.in_stage("train"):
        net = _train(run, train, y_train, outputs, kinds)
        probs = [o for o, k in zip(outputs, kinds) if k == PROBABILITY]
        report = {"test": _report_rows_json(
            classification_report(net, test, y_test, cfg.rules.threshold, probs)
        )} if probs else {"test": []}
        reg = {}
        for o, k in zip(outputs, kinds):
            if k == REGRESSION:
                yhat = net.predict_output(test.rows, o)
                reg[o] = {"rmse": rmse(yhat, y_test.column(o)),
                          "nasa_score": nasa_score(yhat, y_test.column(o))}
        report["regression"] = reg
        run.json("classification.json", report)
    with run.in_stage("background"):
        bg, bg_desc = _background(run, train)

    s, r = cfg.shapley, cfg.rules
    preds = net.predict_batch(test.rows)
    table = []
    for o, k in zip(outputs, kinds):
        prefix = f"{o}/"
        with run.in_stage(f"{prefix}explain"):
            seed = cfg.stage_seed(s)
            run.seeds[f"{prefix}shapley"] = seed
            attr = attribute_dataset(net, test, bg, o, s.m, seed, s.estimator, cfg.threads,
                                     background_summary=bg_desc)
            run.json(f"{prefix}attributions.json", attr.to_json())
            attr.to_csv(run.path(f"{prefix}attributions.csv"))
            ranked = global_importance(attr)
            _write_importance(run, ranked, f"{prefix}importance.csv")
        p = preds[:, net.output_index(o)]
        if k == PROBABILITY and o not in r.all_rows_outputs:
            subset = np.flatnonzero(p >= r.threshold)
        else:
            subset = np.arange(test.n_samples)
        entry = {"target": o, "n_samples": int(subset.size), "clustering_csv": None}
        h = cfg.hdbscan
        if subset.size < max(h.min_cluster_size, 3):
            entry["skipped"] = (
                f"{subset.size} rows in the clustered subset, fewer than min_cluster_size"
            )
            run.summary["results"].append(entry)
            continue
        ids = tuple(test.sample_ids[i] for i in subset)
        emb, cl = _embed_and_cluster(run, attr.phi[subset], ids, prefix)
        with run.in_stage(f"{prefix}rules"):
            desc = _rules_for(run, cl, test_raw.take(subset), ranked, prefix, _display_name(o))
            table.extend(desc)
        entry = _cluster_summary(o, cl, prefix, None, rules_md=f"{prefix}rules.md",
                                 subset="all" if subset.size == test.n_samples else "predicted_positive")
        run.summary["results"].append(entry)
        if cfg.output.plots:
            with run.in_stage(f"{prefix}plots"):
                plotting.plot_importance(ranked, run.path(f"{prefix}importance.svg"),
                                         r.top_k, title=_display_name(o))
                plotting.plot_embedding(emb.coords, cl.labels,
                                        run.path(f"{prefix}embedding_clusters.svg"),
                                        title=_display_name(o))
                if "cycle" in test_raw.feature_names:
                    plotting.plot_embedding(emb.coords, test_raw.column("cycle")[subset],
                                            run.path(f"{prefix}embedding_cycle.svg"),
                                            continuous=True, color_label="cycle")
    run.path("rules.md").write_text(rules_markdown(table), encoding="utf-8")


_MODES = {"unsupervised": _unsupervised, "semi_supervised": _semi_supervised,
          "supervised": _supervised}


def run_pipeline(cfg: PipelineConfig) -> Path:
    """Run every stage of ``cfg.mode``; returns the run directory.

    On failure the partial artifacts and a manifest naming the failed stage
    are kept, and the error is re-raised with the stage name prepended.
    """
    run = Run(cfg)
    run.seeds["global"] = cfg.seed
    try:
        _MODES[cfg.mode](run)
    except ShapclustError as exc:
        run.write_manifest("failed", str(exc))
        raise type(exc)(f"stage {run.stage}: {exc}") from exc
    except AssertionError as exc:
        run.write_manifest("failed", f"assertion: {exc}")
        raise
    run.write_manifest("ok")
    return run.dir


# --------------------------------------------------------------------------
# report


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _load_summary(run_dir: Path) -> Optional[dict]:
    p = run_dir / SUMMARY
    return json.loads(p.read_text(encoding="utf-8")) if p.is_file() else None


def _classification_md(run_dir: Path) -> str:
    p = run_dir / "classification.json"
    if not p.is_file():
        return "_not produced_\n"
    doc = json.loads(p.read_text(encoding="utf-8"))
    out = []
    for key, rows in doc.items():
        if key == "regression":
            if rows:
                out.append(_md_table(
                    ["Output", "RMSE", "NASA score"],
                    [[o, fmt(v["rmse"]), fmt(v["nasa_score"])] for o, v in rows.items()],
                ))
            continue
        if not rows:
            continue
        out.append(f"Evaluated on: {key}\n\n" + _md_table(
            ["Prediction", "Precision", "Recall", "F1-Score", "Support"],
            [[r["prediction"], fmt(r["precision"]), fmt(r["recall"]), fmt(r["f1"]), r["support"]]
             for r in rows],
        ))
    return "\n".join(out) if out else "_not produced_\n"


def _primary_labels(run_dir: Path, summary: Optional[dict]):
    if not summary:
        return None
    for res in summary.get("results", []):
        csv_name = res.get("clustering_csv")
        if csv_name and (run_dir / csv_name).is_file():
            return load_clustering_csv(run_dir / csv_name)
    return None


def report(run_dirs) -> str:
    """Markdown summary of one or more run directories."""
    run_dirs = [Path(d) for d in ([run_dirs] if isinstance(run_dirs, (str, Path)) else run_dirs)]
    if not run_dirs:
        raise DataError("no run directories given")
    parts = ["# Run report\n"]
    labelings = []
    for d in run_dirs:
        if not d.is_dir():
            raise DataError(f"no such run directory: {d}")
        summary = _load_summary(d)
        man = d / MANIFEST
        status = json.loads(man.read_text(encoding="utf-8")) if man.is_file() else None
        mode = (summary or {}).get("mode", "unknown")
        parts.append(f"## {d.name} ({mode})\n")
        if status is None:
            parts.append("Manifest: _not produced_\n")
        elif status["status"] != "ok":
            parts.append(f"Run failed at stage `{status['failed_stage']}`: {status['error']}\n")
        parts.append("### Classification\n")
        parts.append(_classification_md(d))
        parts.append("### Clustering\n")
        results = (summary or {}).get("results", [])
        if results:
            parts.append(_md_table(
                ["Target", "Samples", "Clusters", "Unclustered fraction", "NMI vs truth"],
                [[r["target"], r.get("n_samples", ""),
                  r.get("n_clusters", "not produced"),
                  fmt(r["noise_fraction"], 4) if "noise_fraction" in r else "not produced",
                  fmt(r.get("nmi_vs_truth"), 3)] for r in results],
            ))
        else:
            parts.append("_not produced_\n")
        parts.append("### Rules\n")
        rule_files = [r.get("rules_md") for r in results if r.get("rules_md")]
        if not rule_files:
            parts.append("_not produced_\n")
        for rf in rule_files:
            p = d / rf
            target = rf.rsplit("/", 1)[0] if "/" in rf else "clusters"
            parts.append(f"#### {target}\n")
            parts.append(p.read_text(encoding="utf-8") if p.is_file() else "_not produced_\n")
        labelings.append((d.name, _primary_labels(d, summary), results[0] if results else None))

    if len(run_dirs) > 1:
        parts.append("## Comparison\n")
        rows = []
        for (na, la, ra), (nb, lb, rb) in _pairs(labelings):
            if la is None or lb is None:
                rows.append([na, nb, "not produced"])
                continue
            common = [s for s in la[0] if s in set(lb[0])]
            if not common:
                rows.append([na, nb, "no shared samples"])
                continue
            ia = {s: i for i, s in enumerate(la[0])}
            ib = {s: i for i, s in enumerate(lb[0])}
            a = la[1][[ia[s] for s in common]]
            b = lb[1][[ib[s] for s in common]]
            rows.append([na, nb, fmt(nmi(a, b), 3)])
        parts.append(_md_table(["Run A", "Run B", "Pairwise NMI"], rows))
        parts.append(_md_table(
            ["Run", "Clusters", "Unclustered fraction"],
            [[n, r.get("n_clusters", "not produced") if r else "not produced",
              fmt(r.get("noise_fraction"), 4) if r else "not produced"]
             for n, _, r in labelings],
        ))
    return "\n".join(parts)


def _pairs(items):
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            yield items[i], items[j]

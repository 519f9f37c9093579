"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .cluster import Clustering, hdbscan, load_clustering_csv
from .core import (
    Dataset,
    NormParams,
    apply_normalizer,
    fit_normalizer,
    load_csv,
    load_json,
    save_json,
    write_csv,
)
from .embed import Embedding, UmapParams, umap
from .errors import ConfigError, DataError, NumericError, ShapclustError
from .features import featurize_fleet, load_manifest
from .model import (
    PROBABILITY,
    REGRESSION,
    ExternalPredictor,
    MlpSpec,
    load_predictor,
    train_mlp,
)
from .pipeline import load_config, report, run_pipeline
from .rules import describe_clusters, rules_csv, rules_markdown
from .shapley import (
    PREDICTED_CLASS,
    AttributionMatrix,
    attribute_dataset,
    global_importance,
    sample_background,
)

log = logging.getLogger("shapclust")


def _csv_list(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


def _int_list(s: str) -> list[int]:
    try:
        return [int(p) for p in _csv_list(s)]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_suffix(suffix)


# --------------------------------------------------------------------------
# subcommands


def cmd_featurize(a) -> None:
    data, targets = featurize_fleet(load_manifest(a.manifest))
    write_csv(data, a.out)
    print(f"{data.n_samples} cycles x {data.n_features} features -> {a.out}")
    if a.targets_out:
        if targets is None:
            raise DataError("some cycles lack target fields; no target table written")
        write_csv(targets, a.targets_out)


def cmd_train(a) -> None:
    data = load_csv(a.data, True, a.label_column, a.id_column, _csv_list(a.drop_columns))
    if a.normalize != "none":
        params = fit_normalizer(data, a.normalize)
        save_json(params.to_json(), _sidecar(Path(a.out), ".norm.json"))
        data = apply_normalizer(data, params)
    if a.targets:
        tgt = load_csv(a.targets, True, None, a.targets_id_column)
        if tgt.n_samples != data.n_samples:
            raise DataError(f"targets have {tgt.n_samples} rows, data has {data.n_samples}")
        outputs = tuple(_csv_list(a.outputs)) if a.outputs else tgt.feature_names
        reg = set(_csv_list(a.regression_outputs))
        kinds = tuple(REGRESSION if o in reg else PROBABILITY for o in outputs)
        targets = Dataset(tgt.feature_names, tgt.rows, None, data.sample_ids)
        train = data
    elif a.label_column:
        lab = data.labeled_mask()
        train = data.take(np.flatnonzero(lab))
        classes = sorted({v for v in train.labels})
        outputs = tuple(f"class_{c}" for c in classes)
        kinds = (PROBABILITY,) * len(outputs)
        Y = np.array([[float(v == c) for c in classes] for v in train.labels])
        targets = Dataset(outputs, Y, None, train.sample_ids)
    else:
        raise ConfigError("train needs --targets or --label-column")
    spec = MlpSpec(
        hidden=_int_list(a.hidden),
        output_names=outputs,
        output_kinds=kinds,
        epochs=a.epochs,
        learning_rate=a.learning_rate,
        batch_size=a.batch_size,
        activation=a.activation,
        seed=a.seed,
    )
    net = train_mlp(train, targets, spec)
    save_json(net.to_json(), a.out)
    print(f"trained {net.n_params} parameters on {train.n_samples} rows -> {a.out}")


def _load_model(a):
    if a.external:
        if not a.outputs:
            raise ConfigError("--external needs --outputs")
        outs = _csv_list(a.outputs)
        return ExternalPredictor(a.external, a.n_features, outs, [PROBABILITY] * len(outs))
    if not a.model:
        raise ConfigError("explain needs --model or --external")
    return load_predictor(load_json(a.model))


def cmd_explain(a) -> None:
    data = load_csv(a.data, True, None, a.id_column, _csv_list(a.drop_columns))
    if a.norm:
        data = apply_normalizer(data, NormParams.from_json(load_json(a.norm)))
    if a.external and a.n_features is None:
        a.n_features = data.n_features
    p = _load_model(a)
    pool = data
    if a.background:
        pool = load_csv(a.background, True, None, a.id_column, _csv_list(a.drop_columns))
        if a.norm:
            pool = apply_normalizer(pool, NormParams.from_json(load_json(a.norm)))
    bg, desc = sample_background(pool, a.background_cap, a.seed)
    output = a.output
    class_outputs = None
    if output == PREDICTED_CLASS:
        class_outputs = [n for n in p.output_names if n.startswith("class_")] or [
            n for n, k in zip(p.output_names, p.output_kinds) if k == PROBABILITY
        ]
    attr = attribute_dataset(p, data, bg, output, a.m, a.seed, a.estimator, a.threads,
                             class_outputs, desc)
    save_json(attr.to_json(), a.out)
    attr.to_csv(_sidecar(Path(a.out), ".csv"))
    gap = float(attr.local_accuracy_gap().max())
    print(f"attributed {data.n_samples} rows; max local accuracy gap {gap:.3g} -> {a.out}")


def _matrix_input(path: Path) -> tuple[np.ndarray, tuple[str, ...]]:
    if path.suffix == ".json":
        doc = load_json(path)
        if "phi" in doc:
            attr = AttributionMatrix.from_json(doc)
            return attr.phi, attr.sample_ids
        d = Dataset.from_json(doc)
        return d.rows, d.sample_ids
    d = load_csv(path, True, None, "sample_id")
    return d.rows, d.sample_ids


def cmd_embed(a) -> None:
    X, ids = _matrix_input(Path(a.input))
    params = UmapParams(
        n_neighbors=a.n_neighbors,
        min_dist=a.min_dist,
        n_components=a.n_components,
        n_epochs=a.n_epochs,
        seed=a.seed,
        parallel=a.parallel,
    )
    emb = umap(X, params, ids)
    save_json(emb.to_json(), a.out)
    emb.to_csv(_sidecar(Path(a.out), ".csv"))
    print(f"embedded {X.shape[0]} rows into {emb.coords.shape[1]} dimensions -> {a.out}")


def cmd_cluster(a) -> None:
    path = Path(a.embedding)
    if path.suffix == ".json":
        emb = Embedding.from_json(load_json(path))
        X, ids = emb.coords, emb.sample_ids
    else:
        X, ids = _matrix_input(path)
    cl = hdbscan(X, a.min_cluster_size, a.min_samples, ids)
    save_json(cl.to_json(), a.out)
    cl.to_csv(_sidecar(Path(a.out), ".csv"))
    print(f"{cl.n_clusters} clusters, unclustered fraction {cl.noise_fraction:.4f} -> {a.out}")


def cmd_rules(a) -> None:
    data = load_csv(a.data, True, None, a.id_column)
    ids, labels = load_clustering_csv(a.clustering)
    pos = {s: i for i, s in enumerate(data.sample_ids)}
    missing = [s for s in ids if s not in pos]
    if missing:
        raise DataError(f"{len(missing)} clustered samples missing from the data, e.g. {missing[0]}")
    sub = data.take([pos[s] for s in ids])
    attr = AttributionMatrix.from_json(load_json(a.attributions))
    n_clusters = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    cl = Clustering(labels, n_clusters, 0, 0, (), ids)
    desc = describe_clusters(cl, sub, global_importance(attr), a.min_precision, a.min_recall,
                             a.seed, a.n_trees, a.top_k, a.prediction)
    md = rules_markdown(desc)
    Path(a.out).write_text(md, encoding="utf-8")
    rules_csv(desc, _sidecar(Path(a.out), ".csv"))
    print(md, end="")


def cmd_pipeline(a) -> None:
    cfg = load_config(a.config)
    if a.threads is not None:
        cfg.threads = a.threads
    if a.seed is not None:
        cfg.seed = a.seed
    if a.out is not None:
        cfg.output.dir = Path(a.out)
    out = run_pipeline(cfg)
    print(f"run complete -> {out}")


def cmd_report(a) -> None:
    md = report(a.runs)
    if a.out:
        Path(a.out).write_text(md, encoding="utf-8")
    else:
        print(md, end="")


def cmd_plot(a) -> None:
    emb = Embedding.from_json(load_json(a.embedding))
    if a.clustering:
        ids, labels = load_clustering_csv(a.clustering)
        if emb.sample_ids and tuple(ids) != tuple(emb.sample_ids):
            raise DataError("clustering and embedding sample ids differ")
        colors, continuous = labels, False
    elif a.color_csv:
        if not a.color_column:
            raise ConfigError("--color-csv needs --color-column")
        d = load_csv(a.color_csv, True, None, a.id_column)
        colors, continuous = d.column(a.color_column), True
    else:
        colors, continuous = np.zeros(emb.coords.shape[0], dtype=int), False
    plotting.plot_embedding(emb.coords, colors, a.out, a.title, continuous,
                            a.color_column or "")
    print(f"wrote {a.out}")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapclust", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="cycle files -> feature table")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--targets-out")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train the feed-forward network")
    p.add_argument("data")
    p.add_argument("--targets", help="target table (supervised)")
    p.add_argument("--targets-id-column", default="sample_id")
    p.add_argument("--label-column", help="partial label column (semi-supervised)")
    p.add_argument("--id-column")
    p.add_argument("--drop-columns", default="", help="comma-separated columns to ignore")
    p.add_argument("--outputs", help="comma-separated output names")
    p.add_argument("--regression-outputs", default="rul")
    p.add_argument("--hidden", default="64,32")
    p.add_argument("--activation", default="relu", choices=["relu", "tanh"])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--normalize", default="zscore", choices=["zscore", "minmax", "none"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="Shapley attributions for every row")
    p.add_argument("data")
    p.add_argument("--model")
    p.add_argument("--external", help="command mapping CSV rows on stdin to CSV on stdout")
    p.add_argument("--n-features", type=int)
    p.add_argument("--outputs", help="output names of an external predictor")
    p.add_argument("--norm", help="normalization JSON written by train")
    p.add_argument("--id-column")
    p.add_argument("--drop-columns", default="", help="comma-separated columns to ignore")
    p.add_argument("--output", default=PREDICTED_CLASS,
                   help=f"output to explain (default {PREDICTED_CLASS})")
    p.add_argument("--estimator", default="mc_permutation", choices=["mc_permutation", "exact"])
    p.add_argument("--m", type=int, default=60)
    p.add_argument("--background", help="CSV to draw the reference rows from")
    p.add_argument("--background-cap", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("embed", help="UMAP embedding")
    p.add_argument("input", help="attributions/dataset JSON or CSV with sample_id")
    p.add_argument("--n-neighbors", type=int, default=200)
    p.add_argument("--min-dist", type=float, default=0.0)
    p.add_argument("--n-components", type=int, default=2)
    p.add_argument("--n-epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", action="store_true",
                   help="parallel layout updates (faster, not reproducible)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="HDBSCAN clustering")
    p.add_argument("embedding")
    p.add_argument("--min-cluster-size", type=int, default=20)
    p.add_argument("--min-samples", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("rules", help="rules describing each cluster")
    p.add_argument("data", help="original-scale feature CSV")
    p.add_argument("--clustering", required=True)
    p.add_argument("--attributions", required=True)
    p.add_argument("--id-column", default="sample_id")
    p.add_argument("--prediction", default="")
    p.add_argument("--min-precision", type=float, default=0.6)
    p.add_argument("--min-recall", type=float, default=0.3)
    p.add_argument("--n-trees", type=int, default=30)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("pipeline", help="run a whole pipeline from a TOML config")
    p.add_argument("config")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="override output.dir")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="Markdown summary of run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="SVG scatter of an embedding")
    p.add_argument("embedding")
    p.add_argument("--clustering", help="color by cluster labels")
    p.add_argument("--color-csv", help="color by a numeric column of this CSV")
    p.add_argument("--color-column")
    p.add_argument("--id-column", default="sample_id")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ShapclustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

import json
import re

import pytest

from shapclust.core import write_csv
from shapclust.errors import ConfigError, DataError
from shapclust.features import featurize_fleet
from shapclust.pipeline import (
    MANIFEST,
    load_config,
    parse_config,
    report,
    run_pipeline,
    sha256_file,
)
from shapclust.synthetic import semi_supervised_benchmark, synthetic_fleet

from .helpers import write_blobs_csv, write_labeled_csv


def _unsup_doc(tmp_path, out="run"):
    return {
        "mode": "unsupervised",
        "input": {"data": str(write_blobs_csv(tmp_path / "blobs.csv")), "truth_column": "truth"},
        "umap": {"n_neighbors": 15, "n_epochs": 100},
        "hdbscan": {"min_cluster_size": 15, "min_samples": 5},
        "output": {"dir": str(tmp_path / out)},
    }


@pytest.fixture(scope="module")
def semi_csv(tmp_path_factory):
    d, truth = semi_supervised_benchmark(n=300, minority_fraction=0.1, labeled_fraction=0.1, seed=0)
    return write_labeled_csv(d, truth, tmp_path_factory.mktemp("semi") / "semi.csv")


def _semi_doc(csv_path, out, **over):
    doc = {
        "mode": "semi_supervised",
        "input": {"data": str(csv_path), "id_column": "sample_id", "label_column": "label",
                  "truth_column": "truth"},
        "model": {"hidden": [16], "epochs": 100, "learning_rate": 0.05, "batch_size": 8},
        "shapley": {"estimator": "exact"},
        "umap": {"n_neighbors": 15, "n_epochs": 100},
        "hdbscan": {"min_cluster_size": 10, "min_samples": 10},
        "rules": {},
        "output": {"dir": str(out)},
    }
    doc.update(over)
    return doc


@pytest.fixture(scope="module")
def fleet_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("fleet")
    data, tg = featurize_fleet(synthetic_fleet(n_units=6, max_cycles=30, length=20, seed=0))
    write_csv(data, root / "fleet.csv")
    write_csv(tg, root / "targets.csv")
    return root


@pytest.fixture(scope="module")
def sup_run(fleet_files):
    cfg = parse_config({
        "mode": "supervised",
        "input": {"data": "fleet.csv", "id_column": "sample_id", "targets": "targets.csv"},
        "model": {"hidden": [32, 16], "epochs": 60},
        "shapley": {"m": 10},
        "umap": {"n_neighbors": 10, "n_epochs": 50},
        "hdbscan": {"min_cluster_size": 5, "min_samples": 3},
        "output": {"dir": "run_sup"},
    }, fleet_files)
    return run_pipeline(cfg)


# --------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"extra_key": 1}, "extra_key"),
        ({"umap": {"n_neighbours": 5}}, "umap.n_neighbours"),
        ({"shapley": {"m": 5}}, "shapley"),
        ({"mode": "transductive"}, "mode"),
    ],
)
def test_invalid_configs_name_the_field(tmp_path, patch, field):
    doc = _unsup_doc(tmp_path)
    doc.update(patch)
    with pytest.raises(ConfigError, match=re.escape(field)):
        parse_config(doc)


def test_mode_requirements(tmp_path):
    with pytest.raises(ConfigError, match="label_column"):
        parse_config({"mode": "semi_supervised", "input": {"data": "x.csv"}, "output": {"dir": "o"}})
    with pytest.raises(ConfigError, match="targets"):
        parse_config({"mode": "supervised", "input": {"data": "x.csv"}, "output": {"dir": "o"}})
    cfg = parse_config({"mode": "supervised", "input": {"data": "x.csv", "targets": "t.csv"},
                        "output": {"dir": "o"}})
    assert cfg.model is not None and cfg.shapley is not None and cfg.rules is not None


def test_stage_seeds_default_to_global(tmp_path):
    cfg = parse_config(_semi_doc("x.csv", "o", seed=7, umap={"seed": 3}))
    assert cfg.stage_seed(cfg.model) == 7
    assert cfg.stage_seed(cfg.umap) == 3


def test_load_config_errors_and_relative_paths(tmp_path):
    with pytest.raises(ConfigError, match="no such config"):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("mode = \n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")
    (tmp_path / "ok.toml").write_text(
        'mode = "unsupervised"\n[input]\ndata = "d.csv"\n[output]\ndir = "out"\n'
    )
    cfg = load_config(tmp_path / "ok.toml")
    assert cfg.input.data == tmp_path / "d.csv" and cfg.output.dir == tmp_path / "out"


# --------------------------------------------------------------------------
# runs


def _manifest(run_dir):
    return json.loads((run_dir / MANIFEST).read_text())


def _assert_manifest_complete(run_dir):
    man = _manifest(run_dir)
    files = {p.relative_to(run_dir).as_posix() for p in run_dir.rglob("*")
             if p.is_file() and p.name != MANIFEST}
    assert set(man["artifacts"]) == files
    for name, digest in man["artifacts"].items():
        assert sha256_file(run_dir / name) == digest
    return man


def test_unsupervised_run(tmp_path):
    out = run_pipeline(parse_config(_unsup_doc(tmp_path)))
    man = _assert_manifest_complete(out)
    assert man["status"] == "ok" and man["seeds"]["umap"] == 0
    summary = json.loads((out / "summary.json").read_text())
    res = summary["results"][0]
    assert res["n_clusters"] == 3 and res["nmi_vs_truth"] > 0.95
    for name in ("embedding.json", "clustering.csv", "embedding_clusters.svg", "embedding_truth.svg"):
        assert (out / name).is_file()


def test_runs_are_byte_identical(tmp_path):
    a = run_pipeline(parse_config(_unsup_doc(tmp_path, "a")))
    b = run_pipeline(parse_config(_unsup_doc(tmp_path, "b")))
    ma, mb = _manifest(a), _manifest(b)
    assert ma["artifacts"] == mb["artifacts"]


def test_semi_supervised_run(semi_csv, tmp_path):
    out = run_pipeline(parse_config(_semi_doc(semi_csv, tmp_path / "semi")))
    man = _assert_manifest_complete(out)
    assert set(man["seeds"]) >= {"model", "background", "shapley", "umap", "rules"}
    attr = json.loads((out / "attributions.json").read_text())
    assert attr["shape"] == [300, 8] and attr["target_output"] == "@predicted_class"
    cls = json.loads((out / "classification.json").read_text())
    assert {r["prediction"] for r in cls["truth"]} == {"Fault1", "Fault2", "Normal"}
    res = json.loads((out / "summary.json").read_text())["results"][0]
    assert res["nmi_vs_truth"] is not None and res["n_clusters"] >= 1
    # the truth column never reaches the features
    assert json.loads((out / "model.json").read_text())["feature_names"] == [f"f{j}" for j in range(8)]
    assert (out / "rules.md").read_text().startswith("| Prediction |")


def test_semi_supervised_needs_labels(tmp_path):
    (tmp_path / "d.csv").write_text("a,label\n1,x\n2,\n3,\n")
    doc = _semi_doc(tmp_path / "d.csv", tmp_path / "o")
    doc["input"] = {"data": str(tmp_path / "d.csv"), "label_column": "label"}
    with pytest.raises(DataError, match="stage load"):
        run_pipeline(parse_config(doc))


def test_supervised_run(sup_run):
    man = _assert_manifest_complete(sup_run)
    summary = json.loads((sup_run / "summary.json").read_text())
    targets = [r["target"] for r in summary["results"]]
    assert targets[0] == "health_state" and targets[-1] == "rul"
    for r in summary["results"]:
        if "skipped" in r:
            continue
        d = sup_run / r["target"]
        for name in ("attributions.json", "importance.csv", "clustering.csv", "rules.md",
                     "embedding_cycle.svg"):
            assert (d / name).is_file(), (r["target"], name)
    hs = next(r for r in summary["results"] if r["target"] == "health_state")
    assert hs["subset"] == "all"
    cls = json.loads((sup_run / "classification.json").read_text())
    assert "rul" in cls["regression"] and cls["regression"]["rul"]["rmse"] >= 0
    assert man["seeds"]["split"] == 0


def test_failed_run_keeps_a_manifest(tmp_path):
    doc = _unsup_doc(tmp_path)
    doc["input"]["data"] = str(tmp_path / "missing.csv")
    with pytest.raises(DataError, match="stage load"):
        run_pipeline(parse_config(doc))
    man = _manifest(tmp_path / "run")
    assert man["status"] == "failed" and man["failed_stage"] == "load"


# --------------------------------------------------------------------------
# report


def test_report_single_unsupervised(tmp_path):
    out = run_pipeline(parse_config(_unsup_doc(tmp_path)))
    md = report([out])
    cls = md.split("### Classification\n")[1].split("###")[0]
    assert "_not produced_" in cls
    assert "| features | 180 | 3 |" in md


def test_report_compares_runs(tmp_path):
    a = run_pipeline(parse_config(_unsup_doc(tmp_path, "a")))
    doc = _unsup_doc(tmp_path, "b")
    doc["seed"] = 1
    b = run_pipeline(parse_config(doc))
    md = report([a, b])
    assert "| Run A | Run B | Pairwise NMI |" in md
    row = next(line for line in md.splitlines() if line.startswith("| a | b |"))
    assert 0.0 <= float(row.split("|")[3]) <= 1.0
    assert "| Run | Clusters | Unclustered fraction |" in md


def test_report_lists_rules_per_target(sup_run):
    md = report(sup_run)
    produced = [r["target"] for r in json.loads((sup_run / "summary.json").read_text())["results"]
                if r.get("rules_md")]
    assert produced
    for t in produced:
        assert f"#### {t}\n" in md
    assert md.count("| Prediction | Cluster | Identified Rule |") == len(produced)


def test_report_missing_dir(tmp_path):
    with pytest.raises(DataError):
        report([tmp_path / "nope"])

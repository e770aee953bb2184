import json

import numpy as np
import pytest

from diabrisk.cli import main
from diabrisk.config import build_config
from diabrisk.corpus import load_corpus
from diabrisk.evalx import METRICS
from diabrisk.features import read_fused_csv

SMALL = {
    "generator": {"n_patients": 120},
    "features": {"vocab_size": 60},
    "tagger": {"embed_dim": 8, "hidden_units": 8, "max_epochs": 3},
    "gb": {"num_rounds": 15, "max_depth": 3},
}


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def stages(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    common = ["--config", cfg, "--seed", 7]
    assert run("generate", *common, "--out", root / "corpus") == 0
    assert run("train-tagger", *common, "--corpus", root / "corpus", "--out", root / "tagger") == 0
    assert run("extract", *common, "--tagger", root / "tagger" / "tagger.json",
               "--corpus", root / "corpus", "--out", root / "fused") == 0
    assert run("train-risk", *common, "--fused", root / "fused" / "fused.csv",
               "--out", root / "risk") == 0
    return root, common


def test_generate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("generate", "--seed", 3, "--out", tmp_path / d) == 0
    for name in ("corpus.conll", "records.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    corpus = load_corpus(tmp_path / "a")
    assert len(corpus.records) == 1000
    assert sum(r.label for r in corpus.records) == 300


def test_invalid_config_exits_2_and_writes_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"generator": {"n_patients": -1}}))
    assert run("generate", "--config", bad, "--out", tmp_path / "out") == 2
    assert not (tmp_path / "out").exists()
    bad.write_text(json.dumps({"no_such_section": {}}))
    assert run("generate", "--config", bad, "--out", tmp_path / "out") == 2


def test_usage_error_exits_2(tmp_path):
    assert run("generate") == 2
    assert run("evaluate", "--fused", tmp_path / "x.csv", "--k", 1, "--out", tmp_path) == 2


def test_missing_input_exits_1(tmp_path):
    assert run("train-risk", "--fused", tmp_path / "nope.csv", "--out", tmp_path / "o") == 1


def test_paper_profile_pins_hyperparameters(tmp_path):
    assert run("generate", "--profile", "paper", "--config", tmp_path / "none.json",
               "--out", tmp_path) == 2          # unreadable config file
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({"generator": {"n_patients": 10}}))
    assert run("generate", "--profile", "paper", "--config", cfg, "--out", tmp_path) == 0
    m = read(tmp_path / "manifest_generate.json")
    t, gb = m["config"]["tagger"], m["config"]["gb"]
    assert (t["hidden_units"], t["num_layers"], t["learning_rate"], t["batch_size"],
            t["dropout_rate"]) == (128, 2, 0.001, 32, 0.5)
    assert (gb["eta"], gb["max_depth"], gb["min_child_weight"], gb["subsample"],
            gb["colsample"]) == (0.1, 5, 1.0, 0.8, 0.8)
    assert m["config"]["lr"]["C"] == 0.1
    assert m["config"]["evaluation"]["train_ratio"] == 0.8
    assert m["config"]["evaluation"]["k"] == 5
    assert m["config_hash"] == build_config("paper", {"generator": {"n_patients": 10}}).digest()


def test_tagger_log(stages):
    root, _ = stages
    log = read(root / "tagger" / "tagger_log.json")
    tr = log["training"]
    assert tr["best_epoch"] >= 1
    if tr["stopped_early"]:
        assert tr["stop_epoch"] == tr["best_epoch"] + 3
    assert 0 <= log["held_out"]["token_accuracy"] <= 1
    assert log["n_test"] == 24


def test_extract_shape(stages):
    root, _ = stages
    ds = read_fused_csv(root / "fused" / "fused.csv")
    assert len(ds) == 120
    schema = read(root / "fused" / "fused_schema.json")
    assert ds.columns == schema["columns"]
    assert schema["blocks"] == {"bow": 61, "entity": 3, "structured": 8}   # vocab + UNK


def test_risk_report_metrics(stages):
    root, _ = stages
    report = read(root / "risk" / "risk_report.json")
    for name in ("gb", "lr", "ensemble"):
        assert set(METRICS) <= set(report["models"][name])
    w = report["ensemble_weights"]
    assert w["gb"] + w["lr"] == pytest.approx(1.0)
    assert read(root / "risk" / "manifest_train_risk.json")["command"] == "train_risk"


def test_evaluate_folds(stages, tmp_path):
    root, common = stages
    for d in ("a", "b"):
        assert run("evaluate", *common, "--fused", root / "fused" / "fused.csv",
                   "--k", 5, "--out", tmp_path / d) == 0
    a = (tmp_path / "a" / "cv_report.json").read_bytes()
    assert a == (tmp_path / "b" / "cv_report.json").read_bytes()
    report = json.loads(a)
    folds = report["fold_test_patients"]
    assert len(folds) == 5 and all(len(f) == 24 for f in folds)
    everyone = sorted(p for f in folds for p in f)
    assert everyone == sorted(read_fused_csv(root / "fused" / "fused.csv").patient_ids)
    assert len(report["models"]["ensemble"]["folds"]) == 5


def test_predict(stages, tmp_path):
    root, common = stages
    assert run("predict", *common, "--models", root / "risk",
               "--fused", root / "fused" / "fused.csv", "--out", tmp_path / "p") == 0
    rows = read(tmp_path / "p" / "predictions.json")
    assert len(rows) == 120
    assert all(0 <= r["probability"] <= 1 for r in rows)
    assert run("predict", *common, "--models", root / "risk", "--corpus", root / "corpus",
               "--tagger", root / "tagger" / "tagger.json", "--out", tmp_path / "q") == 0
    assert read(tmp_path / "q" / "predictions.json") == rows


def test_predict_with_pure_gb_weights(stages, tmp_path):
    root, common = stages
    models = tmp_path / "models"
    models.mkdir()
    for name in ("gb.json", "lr.json"):
        (models / name).write_bytes((root / "risk" / name).read_bytes())
    ens = read(root / "risk" / "ensemble.json")
    ens["weights"] = {"gb": 1.0, "lr": 0.0}
    (models / "ensemble.json").write_text(json.dumps(ens))
    assert run("predict", *common, "--models", models, "--fused",
               root / "fused" / "fused.csv", "--out", tmp_path / "p") == 0
    for r in read(tmp_path / "p" / "predictions.json"):
        assert r["probability"] == r["gb"]


def test_predict_empty_input(stages, tmp_path):
    root, common = stages
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run("predict", *common, "--models", root / "risk", "--fused", empty,
               "--out", tmp_path / "p") == 0
    assert read(tmp_path / "p" / "predictions.json") == []


def test_predict_schema_mismatch(stages, tmp_path):
    root, common = stages
    lines = (root / "fused" / "fused.csv").read_text().splitlines()
    header = lines[0].split(",")
    keep = [i for i, c in enumerate(header) if c != header[-1]]
    cut = tmp_path / "cut.csv"
    cut.write_text("\n".join(",".join(row.split(",")[i] for i in keep) for row in lines) + "\n")
    assert run("predict", *common, "--models", root / "risk", "--fused", cut,
               "--out", tmp_path / "p") == 1
    assert not (tmp_path / "p" / "predictions.json").exists()


def test_tagger_schema_mismatch(stages, tmp_path):
    root, common = stages
    d = read(root / "tagger" / "tagger.json")
    d["schema_version"] = 2
    (tmp_path / "t.json").write_text(json.dumps(d))
    assert run("extract", *common, "--tagger", tmp_path / "t.json", "--corpus",
               root / "corpus", "--out", tmp_path / "f") == 1

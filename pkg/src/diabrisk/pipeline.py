"""Stage functions behind the command line: generate, tag, fuse, fit, evaluate, predict."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, boosting
from .config import PipelineConfig, derive_seed
from .corpus import (Corpus, SchemaError, generate_synthetic_corpus, load_corpus, save_corpus,
                     kfold, repair_bio, spans_from_bio, split_dataset, validate_bio)
from .evalx import EvalReport, cross_validate, dump_report, nan_to_null
from .features import (FusedDataset, ScalingStats, Vocabulary, bow_vector, build_vocab,
                       entity_features, read_fused_csv, smote, write_fused_csv,
                       write_schema_json)
from .linear import EnsembleModel, LrModel, lr_fit, lr_predict, save_json, tune_ensemble
from .tagger import Tagger, evaluate_tagger, train
from .tagger.train import write_json

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    config: dict
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / f"manifest_{self.command}.json"
        write_json(asdict(self), path)
        return path


# ---------------------------------------------------------------------------
# Corpus and tagger stages


def generate(cfg: PipelineConfig, out_dir) -> dict[str, Path]:
    corpus = generate_synthetic_corpus(derive_seed(cfg.seed, "generate"), cfg.generator)
    return save_corpus(corpus, out_dir)


def check_tags(corpus: Corpus) -> None:
    for s in corpus.sentences:
        unknown = sorted(set(s.tags) - set(corpus.tag_set))
        if unknown:
            raise SchemaError(f"patient {s.patient_id}: tags {unknown} not in tag set "
                              f"{list(corpus.tag_set)}")


def train_tagger(cfg: PipelineConfig, corpus_dir, out_dir) -> tuple[Tagger, dict]:
    """Train on the training split, early-stop on a validation slice, score held-out notes."""
    corpus = load_corpus(corpus_dir)
    train_c, test_c = split_dataset(corpus, cfg.evaluation.train_ratio,
                                    derive_seed(cfg.seed, "tagger_split"))
    fit_c, val_c = split_dataset(train_c, 1 - cfg.tagger.val_fraction,
                                 derive_seed(cfg.seed, "tagger_val"))
    tcfg = replace(cfg.tagger, seed=derive_seed(cfg.seed, "tagger"))
    model, history = train(fit_c.sentences, val_c.sentences, corpus.tag_set, tcfg)
    model.extra["bow_vocab"] = list(build_vocab(train_c.sentences, cfg.features.vocab_size).tokens)
    model.extra["bow_vocab_max_size"] = cfg.features.vocab_size

    held_out = evaluate_tagger(model, test_c.sentences) if test_c.sentences else {}
    report = {"training": history.to_dict(), "held_out": held_out,
              "n_train": len(fit_c.sentences), "n_val": len(val_c.sentences),
              "n_test": len(test_c.sentences), "test_patients": test_c.patient_ids}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir / "tagger.json")
    write_json(nan_to_null(report), out_dir / "tagger_log.json")
    return model, report


def bow_vocab(tagger: Tagger) -> Vocabulary:
    if "bow_vocab" not in tagger.extra:
        raise SchemaError("tagger file carries no bag-of-words vocabulary")
    return Vocabulary(tagger.extra["bow_vocab"], tagger.extra["bow_vocab_max_size"])


def extract(tagger: Tagger, corpus: Corpus) -> FusedDataset:
    """Tag every note, count predicted entities, attach BoW and raw structured values."""
    kinds = tuple(t[2:] for t in tagger.tag_set if t.startswith("B-"))
    missing = sorted(set(corpus.kinds) - set(kinds))
    if missing:
        raise SchemaError(f"corpus entity kinds {missing} unknown to the tagger")
    check_tags(corpus)
    vocab = bow_vocab(tagger)
    by_patient: dict[str, list] = {}
    for s in corpus.sentences:
        by_patient.setdefault(s.patient_id, []).append(s)
    text, struct, y = [], [], []
    for r in corpus.records:
        bow = np.zeros(len(vocab))
        ent = np.zeros(len(kinds))
        for s in by_patient.get(r.patient_id, []):
            pred = tagger.tag(s.tokens)
            ok, _ = validate_bio(pred, tagger.tag_set)
            if not ok:
                pred = repair_bio(pred)
            bow += bow_vector(s.tokens, vocab)
            ent += entity_features(spans_from_bio(pred), kinds)
        text.append(np.concatenate([bow, ent]))
        struct.append([np.nan if v is None else v for v in r.values])
        y.append(r.label)
    text_cols = [f"bow:{t}" for t in vocab.tokens] + [f"ent:{k}" for k in kinds]
    struct_cols = [f"struct:{c}" for c in corpus.schema]
    n = len(corpus.records)
    return FusedDataset(corpus.patient_ids, np.array(text).reshape(n, len(text_cols)),
                        np.array(struct, dtype=float).reshape(n, len(struct_cols)), y,
                        text_cols, struct_cols)


def extract_stage(tagger_path, corpus_dir, out_dir) -> FusedDataset:
    tagger = Tagger.load(tagger_path)
    corpus = load_corpus(corpus_dir, tag_set=tagger.tag_set)
    ds = extract(tagger, corpus)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_fused_csv(ds, out_dir / "fused.csv")
    write_schema_json(ds, out_dir / "fused_schema.json")
    return ds


# ---------------------------------------------------------------------------
# Risk models


class RiskPipeline:
    """Scaling, SMOTE, boosting, logistic regression and the tuned ensemble.

    Everything is fitted from the rows passed to :meth:`fit`; the ensemble
    weights come from a validation slice held out of those rows.
    """

    def __init__(self, cfg: PipelineConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.stats: ScalingStats | None = None
        self.ensemble: EnsembleModel | None = None
        self.columns: list[str] = []
        self.smoted = None

    def _seed(self, stage):
        return derive_seed(self.seed, stage)

    def fit(self, data: FusedDataset) -> "RiskPipeline":
        if len(np.unique(data.y)) < 2:
            raise ValueError("risk models need both classes in the training data")
        cfg = self.cfg
        fit_ids, val_ids = ([], [])
        if cfg.ensemble.tune:
            fit_ids, val_ids = split_dataset(range(len(data)), 1 - cfg.ensemble.val_fraction,
                                             self._seed("ensemble_split"))
            if len(np.unique(data.y[val_ids])) < 2 or len(np.unique(data.y[fit_ids])) < 2:
                fit_ids, val_ids = list(range(len(data))), []
        else:
            fit_ids = list(range(len(data)))
        fit_part = data.subset(fit_ids)
        self.columns = data.columns
        self.stats = ScalingStats.fit(fit_part.structured)
        x = fit_part.matrix(self.stats)
        self.smoted = smote(x, fit_part.y, cfg.features.smote_k, self._seed("smote"))
        xb, yb = self.smoted.x, self.smoted.y
        gb = boosting.fit(xb, yb, replace(cfg.gb, seed=self._seed("gb")), self.columns)
        lr = lr_fit(xb, yb, cfg.lr.C, cfg.lr.tol, cfg.lr.max_iter, self._seed("lr"))
        if val_ids:
            val = data.subset(val_ids)
            self.ensemble = tune_ensemble(gb, lr, val.matrix(self.stats), val.y,
                                          cfg.ensemble.grid_step)
        else:
            self.ensemble = EnsembleModel(gb, lr)
        return self

    def check_columns(self, data: FusedDataset):
        if data.columns != self.columns:
            diff = sorted(set(data.columns) ^ set(self.columns))[:5]
            raise SchemaError(f"feature columns differ from the trained schema (e.g. {diff})"
                              if diff else "feature columns are in a different order")

    def predict_proba(self, data: FusedDataset) -> dict[str, np.ndarray]:
        if len(data) == 0:
            return {"gb": np.zeros(0), "lr": np.zeros(0), "ensemble": np.zeros(0)}
        self.check_columns(data)
        x = data.matrix(self.stats)
        parts = self.ensemble.components(x)
        e = self.ensemble
        e.check()
        return {**parts, "ensemble": e.w_gb * parts["gb"] + e.w_lr * parts["lr"]}

    def save(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"gb": out_dir / "gb.json", "lr": out_dir / "lr.json",
                 "ensemble": out_dir / "ensemble.json"}
        self.ensemble.gb.save(paths["gb"])
        save_json(self.ensemble.lr.to_dict(), paths["lr"])
        ens = self.ensemble.to_dict(paths["gb"].name, paths["lr"].name)
        ens["scaling"] = self.stats.to_dict()
        ens["columns"] = self.columns
        save_json(ens, paths["ensemble"])
        return paths

    @classmethod
    def load(cls, model_dir, cfg: PipelineConfig | None = None) -> "RiskPipeline":
        model_dir = Path(model_dir)
        ens = json.loads((model_dir / "ensemble.json").read_text(encoding="utf-8"))
        if ens.get("schema_version") != 1 or ens.get("kind") != "ensemble_model":
            raise ValueError("not a supported ensemble_model file")
        gb = boosting.GbModel.load(model_dir / ens["components"]["gb"])
        lr = LrModel.from_dict(json.loads(
            (model_dir / ens["components"]["lr"]).read_text(encoding="utf-8")))
        pipe = cls(cfg or PipelineConfig(), 0)
        pipe.stats = ScalingStats.from_dict(ens["scaling"])
        pipe.columns = list(ens["columns"])
        pipe.ensemble = EnsembleModel(gb, lr, ens["weights"]["gb"], ens["weights"]["lr"],
                                      [(s["w_gb"], s["auc"]) for s in ens["scan"]])
        return pipe


def train_risk(cfg: PipelineConfig, fused_path, out_dir) -> dict:
    data = read_fused_csv(fused_path)
    if len(data) == 0 or len(np.unique(data.y)) < 2:
        raise ValueError("fused dataset must contain both classes")
    train_ids, test_ids = split_dataset(range(len(data)), cfg.evaluation.train_ratio,
                                        derive_seed(cfg.seed, "risk_split"))
    train_part, test_part = data.subset(train_ids), data.subset(test_ids)
    pipe = RiskPipeline(cfg, derive_seed(cfg.seed, "risk")).fit(train_part)
    pipe.save(out_dir)
    report = {"n_train": len(train_part), "n_test": len(test_part),
              "ensemble_weights": {"gb": pipe.ensemble.w_gb, "lr": pipe.ensemble.w_lr},
              "lr_diagnostics": {"iterations": pipe.ensemble.lr.iterations,
                                 "grad_norm": pipe.ensemble.lr.grad_norm,
                                 "converged": pipe.ensemble.lr.converged},
              "models": {}}
    if len(test_part):
        probs = pipe.predict_proba(test_part)
        for name in ("gb", "lr", "ensemble"):
            report["models"][name] = EvalReport.from_predictions(
                test_part.y, probs[name], cfg.evaluation.threshold).to_dict()
    dump_report(report, Path(out_dir) / "risk_report.json")
    write_json(pipe.ensemble.gb.feature_importance(), Path(out_dir) / "gb_importance.json")
    return report


def evaluate(cfg: PipelineConfig, fused_path, out_dir, k: int | None = None,
             seed: int | None = None) -> dict:
    data = read_fused_csv(fused_path)
    k = k or cfg.evaluation.k
    seed = cfg.seed if seed is None else seed
    cv_seed = derive_seed(seed, "cv")
    reports = cross_validate(lambda i: RiskPipeline(cfg, derive_seed(seed, f"fold{i}")),
                             data, k, cv_seed, cfg.evaluation.threshold)
    folds = [[data.patient_ids[j] for j in test] for _, test in kfold(len(data), k, cv_seed)]
    report = {"k": k, "seed": seed, "fold_test_patients": folds,
              "models": {name: r.to_dict() for name, r in reports.items()}}
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    dump_report(report, Path(out_dir) / "cv_report.json")
    return report


def predict(model_dir, data: FusedDataset) -> list[dict]:
    if len(data) == 0:
        return []
    pipe = RiskPipeline.load(model_dir)
    probs = pipe.predict_proba(data)
    return [{"patient_id": pid, "probability": float(probs["ensemble"][i]),
             "gb": float(probs["gb"][i]), "lr": float(probs["lr"][i])}
            for i, pid in enumerate(data.patient_ids)]


# ---------------------------------------------------------------------------


def run_all(cfg: PipelineConfig, out_dir) -> dict:
    """generate -> train-tagger -> extract -> train-risk, with stage timings."""
    out_dir = Path(out_dir)
    timings = {}
    t0 = time.perf_counter()
    generate(cfg, out_dir / "corpus")
    timings["generate"] = time.perf_counter() - t0
    t = time.perf_counter()
    _, tag_report = train_tagger(cfg, out_dir / "corpus", out_dir / "tagger")
    timings["train_tagger"] = time.perf_counter() - t
    t = time.perf_counter()
    extract_stage(out_dir / "tagger" / "tagger.json", out_dir / "corpus", out_dir / "fused")
    timings["extract"] = time.perf_counter() - t
    t = time.perf_counter()
    risk = train_risk(cfg, out_dir / "fused" / "fused.csv", out_dir / "risk")
    timings["train_risk"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    return {"tagger": tag_report, "risk": risk, "timings": timings}

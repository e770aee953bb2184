"""Diabetes risk from tagged clinical notes and structured EHR features.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config
from .corpus import load_corpus
from .features import read_fused_csv
from .tagger import Tagger
from .tagger.train import TrainingDiverged, write_json

log = logging.getLogger("diabrisk")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file mirroring PipelineConfig")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--profile", choices=("desk", "paper"), help="hyperparameter profile")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diabrisk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded synthetic corpus")
    _common(p)

    p = sub.add_parser("train-tagger", help="train the BiLSTM-CRF entity tagger")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("extract", help="tag notes and write the fused feature CSV")
    _common(p)
    p.add_argument("--tagger", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("train-risk", help="fit boosting, logistic regression and the ensemble")
    _common(p)
    p.add_argument("--fused", type=Path, required=True)

    p = sub.add_parser("evaluate", help="k-fold cross-validation of the risk models")
    _common(p)
    p.add_argument("--fused", type=Path, required=True)
    p.add_argument("--k", type=int)

    p = sub.add_parser("predict", help="per-patient risk probabilities")
    _common(p)
    p.add_argument("--models", type=Path, required=True, help="directory written by train-risk")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fused", type=Path, help="fused CSV written by extract")
    src.add_argument("--corpus", type=Path, help="corpus directory (needs --tagger)")
    p.add_argument("--tagger", type=Path)
    return parser


def _run(args, cfg) -> dict:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "generate":
        return {k: str(v) for k, v in pipeline.generate(cfg, out).items()}
    if cmd == "train-tagger":
        pipeline.train_tagger(cfg, args.corpus, out)
        return {"tagger": str(out / "tagger.json"), "log": str(out / "tagger_log.json")}
    if cmd == "extract":
        pipeline.extract_stage(args.tagger, args.corpus, out)
        return {"fused": str(out / "fused.csv"), "schema": str(out / "fused_schema.json")}
    if cmd == "train-risk":
        pipeline.train_risk(cfg, args.fused, out)
        return {name: str(out / f"{name}.json")
                for name in ("gb", "lr", "ensemble", "risk_report", "gb_importance")}
    if cmd == "evaluate":
        if args.k is not None and args.k < 2:
            raise ConfigError("--k must be at least 2")
        pipeline.evaluate(cfg, args.fused, out, args.k)
        return {"report": str(out / "cv_report.json")}
    if cmd == "predict":
        if args.fused is not None:
            data = read_fused_csv(args.fused)
        else:
            if args.tagger is None:
                raise ConfigError("--corpus needs --tagger")
            tagger = Tagger.load(args.tagger)
            data = pipeline.extract(tagger, load_corpus(args.corpus, tag_set=tagger.tag_set))
        rows = pipeline.predict(args.models, data)
        write_json(rows, out / "predictions.json")
        return {"predictions": str(out / "predictions.json")}
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.profile, args.seed)
    except ConfigError as exc:
        print(f"diabrisk: config error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        artifacts = _run(args, cfg)
    except ConfigError as exc:
        print(f"diabrisk: config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"diabrisk: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"diabrisk {args.command}: {exc}", file=sys.stderr)
        return 1
    manifest = pipeline.RunManifest(args.command.replace("-", "_"), cfg.digest(), cfg.seed,
                                    cfg.to_dict(), artifacts,
                                    {args.command: time.perf_counter() - start})
    manifest.write(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Seeded end-to-end run: corpus -> tagger -> fused features -> risk models.

    python scripts/run_desk_pipeline.py --out runs/desk --seed 42
"""
import argparse
import json
import logging
from pathlib import Path

from diabrisk.config import load_config
from diabrisk.pipeline import run_all


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--profile", choices=("desk", "paper"), default="desk")
    ap.add_argument("--config", type=Path)
    ap.add_argument("--n-patients", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config, args.profile, args.seed)
    if args.n_patients:
        cfg.generator.n_patients = args.n_patients
        cfg.validate()
    out = run_all(cfg, args.out)

    held = out["tagger"]["held_out"]
    print(f"tagger  token acc {held['token_accuracy']:.4f}  entity F1 {held['entity']['f1']:.4f}"
          f"  (best epoch {out['tagger']['training']['best_epoch']})")
    for name, rep in out["risk"]["models"].items():
        print(f"{name:9s} auc {rep['auc']:.4f}  acc {rep['accuracy']:.4f}  "
              f"f1 {rep['f1']:.4f}  kappa {rep['kappa']:.4f}")
    print("weights", out["risk"]["ensemble_weights"])
    print("timings", json.dumps({k: round(v, 2) for k, v in out["timings"].items()}))


if __name__ == "__main__":
    main()

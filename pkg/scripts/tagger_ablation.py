"""Compare LSTM, BiLSTM, BiLSTM without CRF and BiLSTM-CRF on one synthetic corpus.

Prints the per-epoch validation loss and held-out token accuracy / entity F1
for every variant. All variants share the corpus, split and seed.
"""
import argparse
import json
from dataclasses import replace

from diabrisk.config import build_config, derive_seed
from diabrisk.corpus import generate_synthetic_corpus, split_dataset
from diabrisk.tagger import train
from diabrisk.tagger.train import evaluate_tagger

VARIANTS = {
    "lstm": dict(bidirectional=False, use_crf=False),
    "bilstm": dict(bidirectional=True, use_crf=False),
    "lstm_crf": dict(bidirectional=False, use_crf=True),
    "bilstm_crf": dict(bidirectional=True, use_crf=True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--n-patients", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.15,
                    help="rate at which context words are replaced by abbreviations")
    ap.add_argument("--json", action="store_true", help="emit one JSON object instead of a table")
    args = ap.parse_args()

    cfg = build_config("desk", {"generator": {"n_patients": args.n_patients,
                                              "noise": args.noise}}, args.seed)
    corpus = generate_synthetic_corpus(derive_seed(cfg.seed, "generate"), cfg.generator)
    train_c, test_c = split_dataset(corpus, 0.8, derive_seed(cfg.seed, "tagger_split"))
    fit_c, val_c = split_dataset(train_c, 0.9, derive_seed(cfg.seed, "tagger_val"))

    results = {}
    for name, flags in VARIANTS.items():
        tcfg = replace(cfg.tagger, max_epochs=args.epochs, patience=args.epochs,
                       seed=derive_seed(cfg.seed, "tagger"), **flags)
        model, log = train(fit_c.sentences, val_c.sentences, corpus.tag_set, tcfg)
        scores = evaluate_tagger(model, test_c.sentences)
        results[name] = {"val_loss": [round(e["val_loss"], 4) for e in log.epochs],
                         "token_accuracy": scores["token_accuracy"],
                         "entity_f1": scores["entity"]["f1"]}

    if args.json:
        print(json.dumps(results, indent=1))
        return
    print(f"{'variant':12s} {'tok acc':>8s} {'ent F1':>8s}  val loss by epoch")
    for name, r in results.items():
        print(f"{name:12s} {r['token_accuracy']:8.4f} {r['entity_f1']:8.4f}  "
              + " ".join(f"{v:.2f}" for v in r["val_loss"]))


if __name__ == "__main__":
    main()

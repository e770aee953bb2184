"""Confusion-matrix metrics, AUC, entity scoring and cross-validation."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import kfold

NAN = float("nan")
METRICS = ("accuracy", "precision", "recall", "f1", "specificity", "kappa", "auc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    def to_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def _binary(a, name):
    a = np.asarray(a)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return a.astype(int)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    t = _binary(y_true, "y_true")
    p = _binary(y_pred, "y_pred")
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {p.size} predictions")
    return ConfusionMatrix(int(np.sum((t == 1) & (p == 1))), int(np.sum((t == 0) & (p == 0))),
                           int(np.sum((t == 0) & (p == 1))), int(np.sum((t == 1) & (p == 0))))


def _ratio(num: float, den: float) -> float:
    return num / den if den else NAN


def metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Accuracy, precision, recall, F1, specificity and Cohen's kappa.

    A zero denominator yields NaN rather than 0.
    """
    n = cm.total
    if n <= 0:
        raise ValueError("empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / n
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if math.isnan(precision) or math.isnan(recall):
        f1 = NAN
    else:
        f1 = _ratio(2 * precision * recall, precision + recall)
    specificity = _ratio(cm.tn, cm.tn + cm.fp)
    # chance agreement from the row and column marginals
    p_e = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / (n * n)
    kappa = _ratio(accuracy - p_e, 1 - p_e)
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1,
            "specificity": specificity, "kappa": kappa}


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for tied scores."""
    s = np.asarray(scores, dtype=float)
    y = _binary(labels, "labels")
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(s)  # average ranks for ties
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def entity_prf(gold: Iterable[Iterable], pred: Iterable[Iterable]) -> dict:
    """Exact-match span scoring, micro-averaged and per kind.

    ``gold`` and ``pred`` hold one span list per sentence.
    """
    counts = Counter()
    for g_spans, p_spans in zip(gold, pred):
        g = {(s.start, s.end, s.kind) for s in g_spans}
        p = {(s.start, s.end, s.kind) for s in p_spans}
        for _, _, kind in g:
            counts[kind, "gold"] += 1
        for span in p:
            counts[span[2], "pred"] += 1
            if span in g:
                counts[span[2], "correct"] += 1
    kinds = sorted({k for k, _ in counts})

    def score(correct, n_gold, n_pred):
        if n_gold == 0 and n_pred == 0:
            return {"precision": 1.0, "recall": 1.0, "f1": 1.0}
        return {"precision": _ratio(correct, n_pred), "recall": _ratio(correct, n_gold),
                "f1": 2 * correct / (n_gold + n_pred)}

    per_kind = {k: score(counts[k, "correct"], counts[k, "gold"], counts[k, "pred"])
                for k in kinds}
    micro = score(sum(counts[k, "correct"] for k in kinds),
                  sum(counts[k, "gold"] for k in kinds),
                  sum(counts[k, "pred"] for k in kinds))
    return {**micro, "per_kind": per_kind}


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float
    kappa: float
    auc: float
    folds: list["EvalReport"] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, y_true, proba, threshold: float = 0.5) -> "EvalReport":
        y_true = np.asarray(y_true, dtype=int)
        proba = np.asarray(proba, dtype=float)
        cm = confusion(y_true, (proba >= threshold).astype(int))
        try:
            a = auc(proba, y_true)
        except ValueError:
            a = NAN
        return cls(cm, auc=a, **metrics(cm))

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    def to_dict(self) -> dict:
        d = {"confusion": self.confusion.to_dict()}
        d.update({m: _fmt(v) for m, v in self.values().items()})
        if self.folds:
            d["folds"] = [f.to_dict() for f in self.folds]
        return d


def _fmt(v: float):
    return None if v is None or math.isnan(v) else round(float(v), 6)


def nan_to_null(obj):
    """Recursively replace float NaN with None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: nan_to_null(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [nan_to_null(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def dump_report(obj, path) -> None:
    """Fixed key order, 6-decimal rounding, NaN written as null."""
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


class FoldError(ValueError):
    pass


def cross_validate(pipeline_factory: Callable, dataset, k: int, seed: int,
                   threshold: float = 0.5) -> dict[str, EvalReport]:
    """k-fold evaluation of freshly fitted pipelines.

    ``pipeline_factory(fold_index)`` returns an object with ``fit(train)`` and
    ``predict_proba(test)``; the latter returns a dict ``name -> probabilities``
    (or a bare array, reported under ``"model"``). All fitting, including scaling
    and oversampling, happens inside ``fit`` on the fold's training rows only.

    Returns one report per model name: the unweighted fold mean of every metric,
    the pooled confusion matrix and the per-fold reports.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    per_model: dict[str, list[EvalReport]] = {}
    for i, (train_idx, test_idx) in enumerate(kfold(len(dataset), k, seed)):
        train, test = dataset.subset(train_idx), dataset.subset(test_idx)
        if len(np.unique(train.y)) < 2:
            raise FoldError(f"fold {i}: training split has a single class")
        pipe = pipeline_factory(i)
        pipe.fit(train)
        out = pipe.predict_proba(test)
        if not isinstance(out, dict):
            out = {"model": out}
        for name, proba in out.items():
            per_model.setdefault(name, []).append(
                EvalReport.from_predictions(test.y, proba, threshold))
    return {name: aggregate(reports) for name, reports in per_model.items()}


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    pooled = reports[0].confusion
    for r in reports[1:]:
        pooled = pooled + r.confusion
    means = {m: float(np.mean([getattr(r, m) for r in reports])) for m in METRICS}
    return EvalReport(pooled, folds=list(reports), **means)

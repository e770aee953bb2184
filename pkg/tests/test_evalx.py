import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diabrisk.corpus import EntitySpan
from diabrisk.evalx import (METRICS, ConfusionMatrix, EvalReport, FoldError, auc, confusion,
                            cross_validate, dump_report, entity_prf, metrics)


def test_confusion_example():
    cm = confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert cm == ConfusionMatrix(tp=2, tn=1, fp=1, fn=1)


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion([1, 0], [1])
    with pytest.raises(ValueError):
        confusion([1, 2], [1, 0])
    with pytest.raises(ValueError):
        confusion([], [])


def test_metrics_balanced():
    m = metrics(ConfusionMatrix(1, 1, 1, 1))
    assert m == {"accuracy": 0.5, "precision": 0.5, "recall": 0.5, "f1": 0.5,
                 "specificity": 0.5, "kappa": 0.0}


def test_metrics_perfect():
    m = metrics(ConfusionMatrix(3, 7, 0, 0))
    assert all(v == 1.0 for v in m.values())


def test_metrics_all_positive_predictions():
    m = metrics(ConfusionMatrix(tp=4, tn=0, fp=6, fn=0))
    assert m["recall"] == 1.0
    assert m["precision"] == 0.4
    assert m["specificity"] == 0.0
    assert m["kappa"] == 0.0


def test_metrics_undefined_ratios_are_nan():
    m = metrics(ConfusionMatrix(tp=0, tn=5, fp=0, fn=0))
    assert math.isnan(m["precision"]) and math.isnan(m["recall"]) and math.isnan(m["f1"])
    assert m["specificity"] == 1.0
    assert math.isnan(m["kappa"])


def fraction_oracle(tp, tn, fp, fn):
    F = Fraction
    n = tp + tn + fp + fn
    out = {"accuracy": F(tp + tn, n)}
    out["precision"] = F(tp, tp + fp) if tp + fp else None
    out["recall"] = F(tp, tp + fn) if tp + fn else None
    out["specificity"] = F(tn, tn + fp) if tn + fp else None
    # 2PR/(P+R) has a zero denominator whenever tp == 0
    out["f1"] = F(2 * tp, 2 * tp + fp + fn) if tp else None
    pe = F((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp), n * n)
    out["kappa"] = (out["accuracy"] - pe) / (1 - pe) if pe != 1 else None
    return out


def test_metrics_against_exact_fractions():
    rng = np.random.default_rng(11)
    for _ in range(100):
        cells = rng.integers(0, 30, 4)
        if cells.sum() == 0:
            continue
        got = metrics(ConfusionMatrix(*map(int, cells)))
        for name, want in fraction_oracle(*map(int, cells)).items():
            if want is None:
                assert math.isnan(got[name]), name
            else:
                assert got[name] == pytest.approx(float(want), abs=1e-12), name


@given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_is_harmonic_mean(tp, tn, fp, fn):
    m = metrics(ConfusionMatrix(tp, tn, fp, fn))
    p, r = m["precision"], m["recall"]
    assert m["f1"] == pytest.approx(2 * p * r / (p + r))
    assert min(p, r) - 1e-12 <= m["f1"] <= max(p, r) + 1e-12


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.2, 0.9], [0, 1]) == 1.0
    assert auc([0.9, 0.2], [0, 1]) == 0.0
    assert auc([0.5, 0.5, 0.5], [0, 1, 1]) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def pairwise_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def test_auc_against_pairwise_oracle():
    rng = np.random.default_rng(4)
    for _ in range(60):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 10, n) / 10.0     # coarse grid produces many ties
        assert auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)


def test_auc_invariant_under_monotone_transform(rng):
    s = rng.normal(size=80)
    y = (s + rng.normal(size=80) > 0).astype(int)
    assert auc(s, y) == pytest.approx(auc(np.exp(3 * s) + 2, y), abs=1e-12)


def test_entity_prf_examples():
    gold = [[EntitySpan(0, 2, "DIS"), EntitySpan(3, 4, "SYM")], []]
    pred = [[EntitySpan(0, 2, "DIS"), EntitySpan(3, 5, "SYM")], [EntitySpan(0, 1, "DIS")]]
    out = entity_prf(gold, pred)
    assert out["precision"] == pytest.approx(1 / 3)
    assert out["recall"] == 0.5
    assert out["f1"] == pytest.approx(2 * 1 / 5)
    assert out["per_kind"]["DIS"] == {"precision": 0.5, "recall": 1.0, "f1": pytest.approx(2 / 3)}
    assert out["per_kind"]["SYM"]["f1"] == 0.0


def test_entity_prf_degenerate():
    assert entity_prf([[]], [[]])["f1"] == 1.0
    missed = entity_prf([[EntitySpan(0, 1, "DIS")]], [[]])
    assert missed["recall"] == 0.0 and missed["f1"] == 0.0
    assert math.isnan(missed["precision"])


def test_report_serialisation(tmp_path):
    r = EvalReport.from_predictions([0, 0, 0], [0.1, 0.2, 0.3])
    d = r.to_dict()
    assert d["auc"] is None and d["precision"] is None
    assert set(METRICS) <= set(d)
    dump_report(d, tmp_path / "r.json")
    assert "NaN" not in (tmp_path / "r.json").read_text()


class Rows:
    def __init__(self, x, y):
        self.x, self.y = np.asarray(x, dtype=float), np.asarray(y)

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        return Rows(self.x[idx], self.y[idx])


class Recorder:
    seen = []

    def fit(self, train):
        pass

    def predict_proba(self, test):
        Recorder.seen.append(test.x[:, 0].copy())
        return {"const": np.full(len(test), 0.7), "oracle": test.y.astype(float)}


def test_cross_validate_folds_and_aggregation():
    Recorder.seen = []
    data = Rows(np.arange(100)[:, None], np.arange(100) % 2)
    out = cross_validate(lambda i: Recorder(), data, k=5, seed=0)
    assert [len(s) for s in Recorder.seen] == [20] * 5
    assert sorted(np.concatenate(Recorder.seen).astype(int)) == list(range(100))
    const = out["const"]
    assert len(const.folds) == 5
    assert const.confusion.total == 100
    assert const.recall == 1.0 and const.specificity == 0.0
    assert const.auc == 0.5
    assert out["oracle"].auc == 1.0 and out["oracle"].kappa == 1.0


def test_cross_validate_single_class_fold():
    data = Rows(np.zeros((10, 1)), [1] * 9 + [0])
    with pytest.raises(FoldError):
        cross_validate(lambda i: Recorder(), data, k=2, seed=0)

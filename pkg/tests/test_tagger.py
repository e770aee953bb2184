import json

import numpy as np
import pytest

from diabrisk.corpus import TaggedSentence, make_tag_set, validate_bio
from diabrisk.features import build_vocab
from diabrisk.tagger import (AdamState, EarlyStopping, Tagger, TrainConfig, adam_step,
                             gradients, init_params, train)
from diabrisk.tagger.model import batch_loss
from diabrisk.tagger.train import clip_by_global_norm, evaluate_tagger

TAGS = make_tag_set(["DIS"])


def tiny(rng, **kw):
    cfg = TrainConfig(embed_dim=3, hidden_units=3, dropout_rate=0.0, **kw)
    params = init_params(cfg, 6, len(TAGS), 1)
    if "crf.A" in params:
        params["crf.A"] = rng.normal(0, 0.5, params["crf.A"].shape)
    ids = [rng.integers(0, 6, n) for n in (3, 4, 3)]
    tags = [rng.integers(0, len(TAGS), len(s)) for s in ids]
    return cfg, params, ids, tags


@pytest.mark.parametrize("kw", [
    {},
    {"num_layers": 2},
    {"bidirectional": False},
    {"use_crf": False},
])
def test_gradients_match_finite_differences(rng, kw):
    cfg, params, ids, tags = tiny(rng, **kw)
    _, grads = gradients(params, cfg, ids, tags)
    eps = 1e-6
    worst = 0.0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = batch_loss(params, cfg, ids, tags)
            p[idx] = old - eps
            down = batch_loss(params, cfg, ids, tags)
            p[idx] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(num - grads[name][idx]) / max(1.0, abs(num)))
    assert worst < 1e-6


def test_emission_gradient_at_uniform_point(rng):
    cfg, params, ids, tags = tiny(rng)
    params["proj.W"][:] = 0
    params["proj.b"][:] = 0
    params["crf.A"][:] = 0
    K = len(TAGS)
    loss, grads = gradients(params, cfg, ids, tags)
    n_tok = sum(len(s) for s in ids)
    assert loss == pytest.approx(n_tok * np.log(K) / len(ids))
    want = np.zeros(K)
    for y in tags:
        want += len(y) / K - np.bincount(y, minlength=K)
    np.testing.assert_allclose(grads["proj.b"], want / len(ids), atol=1e-14)


def test_batch_gradient_is_mean_of_sentence_gradients(rng):
    cfg, params, ids, tags = tiny(rng)
    loss, grads = gradients(params, cfg, ids, tags)
    parts = [gradients(params, cfg, [i], [t]) for i, t in zip(ids, tags)]
    assert loss == pytest.approx(np.mean([p[0] for p in parts]))
    for name in grads:
        np.testing.assert_allclose(grads[name], np.mean([p[1][name] for p in parts], axis=0),
                                   atol=1e-13)


def test_empty_batch_rejected(rng):
    cfg, params, _, _ = tiny(rng)
    with pytest.raises(ValueError):
        gradients(params, cfg, [], [])


def test_adam_zero_gradient_is_noop():
    cfg = TrainConfig()
    params = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params), cfg)
    np.testing.assert_array_equal(new["w"], params["w"])
    assert state.t == 1


def test_adam_first_step():
    cfg = TrainConfig(learning_rate=0.01)
    params = {"w": np.array([1.0, -2.0, 0.5])}
    g = np.array([0.3, -4.0, 1e-3])
    new, _ = adam_step(params, {"w": g}, AdamState.zeros_like(params), cfg)
    np.testing.assert_allclose(new["w"], params["w"] - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_clips_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    same, _ = clip_by_global_norm(grads, 5.0)
    assert same["a"][0] == 3.0


def test_early_stopping_patience():
    stopper = EarlyStopping(5)
    stops = [stopper.update(e, 1.0 + e) for e in range(1, 7)]
    assert stops == [False] * 5 + [True]
    assert stopper.best_epoch == 1


def test_early_stopping_resets_on_improvement():
    stopper = EarlyStopping(2)
    assert not stopper.update(1, 1.0)
    assert not stopper.update(2, 1.5)
    assert not stopper.update(3, 0.5)
    assert not stopper.update(4, 0.6)
    assert stopper.update(5, 0.7)
    assert stopper.best_epoch == 3


def _sentences(small_corpus, n):
    return small_corpus.sentences[:n], small_corpus.sentences[n:n + 20]


def test_ablation_loss_decreases(small_corpus):
    tr, va = _sentences(small_corpus, 80)
    cfg = TrainConfig(embed_dim=8, hidden_units=8, bidirectional=False, use_crf=False,
                      max_epochs=5, patience=10, seed=1)
    _, log = train(tr, va, small_corpus.tag_set, cfg)
    losses = [e["train_loss"] for e in log.epochs]
    assert len(losses) == 5
    assert losses[-1] < losses[0]


@pytest.fixture(scope="module")
def trained(small_corpus):
    tr, va = _sentences(small_corpus, 80)
    cfg = TrainConfig(embed_dim=8, hidden_units=8, max_epochs=4, seed=2)
    return train(tr, va, small_corpus.tag_set, cfg)


def test_training_is_deterministic(small_corpus, trained):
    tr, va = _sentences(small_corpus, 80)
    again, log = train(tr, va, small_corpus.tag_set, trained[0].config)
    assert log.to_dict() == trained[1].to_dict()
    for k in again.params:
        np.testing.assert_array_equal(again.params[k], trained[0].params[k])


def test_stop_epoch_rule(trained):
    model, log = trained
    if log.stopped_early:
        assert log.stop_epoch == log.best_epoch + model.config.patience
    losses = [e["val_loss"] for e in log.epochs]
    assert log.best_epoch == 1 + int(np.argmin(losses))


def test_predictions_are_valid_bio(small_corpus, trained):
    model, _ = trained
    for s in small_corpus.sentences[100:]:
        pred = model.tag(s.tokens)
        assert len(pred) == len(s.tokens)
        assert validate_bio(pred, model.tag_set)[0]


def test_save_load_round_trip(tmp_path, small_corpus, trained):
    model, _ = trained
    model.save(tmp_path / "t.json")
    loaded = Tagger.load(tmp_path / "t.json")
    sents = small_corpus.sentences[100:]
    assert loaded.tag_many(sents) == model.tag_many(sents)
    assert evaluate_tagger(loaded, sents) == evaluate_tagger(model, sents)


def test_schema_version_mismatch(tmp_path, trained):
    d = trained[0].to_dict()
    d["schema_version"] = 99
    (tmp_path / "t.json").write_text(json.dumps(d))
    with pytest.raises(ValueError, match="schema_version"):
        Tagger.load(tmp_path / "t.json")


def test_empty_sentence_rejected(trained):
    with pytest.raises(ValueError):
        trained[0].tag([])


def test_unknown_tokens_map_to_unk(trained):
    model, _ = trained
    assert len(model.tag(["zzqx-never-seen", "qqq"])) == 2

import math

import numpy as np
import pytest

from diabrisk.tagger import LstmState, TrainConfig, bilstm_forward, cell_weights, init_params, lstm_step
from diabrisk.tagger.lstm import GATES


def zero_cell(h, d):
    cell = {f"W_{g}": np.zeros((h, h + d)) for g in GATES}
    cell.update({f"b_{g}": np.zeros(h) for g in GATES})
    return cell


def test_zero_weights_zero_state():
    s = lstm_step(zero_cell(3, 2), np.array([0.4, -1.0]), LstmState.zeros(3))
    np.testing.assert_array_equal(s.c, 0)
    np.testing.assert_array_equal(s.h, 0)


def test_zero_weights_carry_cell():
    prev = LstmState(np.zeros(1), np.array([2.0]))
    s, gates = lstm_step(zero_cell(1, 1), np.array([0.7]), prev, return_gates=True)
    for g in ("f", "i", "o"):
        assert gates[g][0] == 0.5
    assert gates["C"][0] == 0.0
    assert s.c[0] == 1.0
    assert s.h[0] == pytest.approx(0.3807970779778824, abs=1e-15)


def test_gate_ranges(rng):
    cell = {f"W_{g}": rng.normal(size=(4, 7)) for g in GATES}
    cell.update({f"b_{g}": rng.normal(size=4) for g in GATES})
    prev = LstmState(rng.uniform(-1, 1, 4), rng.normal(size=4))
    s, gates = lstm_step(cell, rng.normal(size=3), prev, return_gates=True)
    for g in ("f", "i", "o"):
        assert np.all((gates[g] > 0) & (gates[g] < 1))
    assert np.all(np.abs(s.h) < 1)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        lstm_step(zero_cell(2, 2), np.array([np.nan, 0.0]), LstmState.zeros(2))


def _model(rng, **kw):
    cfg = TrainConfig(embed_dim=3, hidden_units=4, dropout_rate=0.0, **kw)
    params = init_params(cfg, 5, 3, 0)
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.5, params[k].shape)
    return cfg, params


def test_single_step_sequence(rng):
    cfg, params = _model(rng)
    x = rng.normal(size=(1, 3))
    out, _ = bilstm_forward(params, cfg, x)
    fwd = lstm_step(cell_weights(params, 0, "fwd"), x[0], LstmState.zeros(4))
    bwd = lstm_step(cell_weights(params, 0, "bwd"), x[0], LstmState.zeros(4))
    np.testing.assert_allclose(out[0], np.concatenate([fwd.h, bwd.h]), atol=1e-14)


def test_sequence_matches_stepwise(rng):
    cfg, params = _model(rng)
    x = rng.normal(size=(6, 3))
    out, _ = bilstm_forward(params, cfg, x)
    state = LstmState.zeros(4)
    for t in range(6):
        state = lstm_step(cell_weights(params, 0, "fwd"), x[t], state)
        np.testing.assert_allclose(out[t, :4], state.h, atol=1e-14)
    state = LstmState.zeros(4)
    for t in reversed(range(6)):
        state = lstm_step(cell_weights(params, 0, "bwd"), x[t], state)
        np.testing.assert_allclose(out[t, 4:], state.h, atol=1e-14)


def test_reversal_symmetry_with_tied_directions(rng):
    cfg, params = _model(rng)
    for k in list(params):
        if ".bwd." in k:
            params[k] = params[k.replace(".bwd.", ".fwd.")].copy()
    x = rng.normal(size=(5, 3))
    out, _ = bilstm_forward(params, cfg, x)
    rev, _ = bilstm_forward(params, cfg, x[::-1])
    expected = np.concatenate([out[::-1, 4:], out[::-1, :4]], axis=1)
    np.testing.assert_allclose(rev, expected, atol=1e-14)


def test_eval_mode_is_deterministic_and_dropout_zero_matches(rng):
    cfg, params = _model(rng)
    x = rng.normal(size=(2, 7, 3))
    a, _ = bilstm_forward(params, cfg, x)
    b, _ = bilstm_forward(params, cfg, x)
    c, _ = bilstm_forward(params, cfg, x, train=True, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_dropout_only_in_train_mode(rng):
    cfg, params = _model(rng)
    cfg.dropout_rate = 0.5
    x = rng.normal(size=(1, 30, 3))
    ev, _ = bilstm_forward(params, cfg, x)
    tr, (_, mask) = bilstm_forward(params, cfg, x, train=True, rng=np.random.default_rng(3))
    assert set(np.unique(mask)) <= {0.0, 2.0}
    np.testing.assert_allclose(tr, ev * mask)


def test_hidden_and_cell_bounds(rng):
    cfg, params = _model(rng, num_layers=2)
    x = rng.normal(0, 3, size=(3, 40, 3))
    out, (caches, _) = bilstm_forward(params, cfg, x)
    assert np.all(np.abs(out) < 1)
    for layer in caches:
        for _, _, H, C, _ in layer:
            assert np.all(np.abs(C) <= np.arange(1, C.shape[1] + 1)[None, :, None])

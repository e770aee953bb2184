"""LSTM cell and sequence passes with hand-written backpropagation through time.

Gate weights act on the concatenation ``[h_prev, x_t]``. Sequence routines work
on batches of equal-length sequences shaped ``(B, T, d_in)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import expit

GATES = ("f", "i", "C", "o")


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "LstmState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


def stack_gates(cell: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    W = np.concatenate([cell[f"W_{g}"] for g in GATES], axis=0)
    b = np.concatenate([cell[f"b_{g}"] for g in GATES])
    return W, b


def lstm_step(cell: Mapping[str, np.ndarray], x_t: np.ndarray, prev: LstmState,
              return_gates: bool = False):
    """One LSTM update. ``cell`` holds W_f, W_i, W_C, W_o and b_f, b_i, b_C, b_o."""
    x_t = np.asarray(x_t, dtype=float)
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(prev.h))
            and np.all(np.isfinite(prev.c))):
        raise ValueError("non-finite input to lstm_step")
    z = np.concatenate([prev.h, x_t], axis=-1)
    f = expit(z @ cell["W_f"].T + cell["b_f"])
    i = expit(z @ cell["W_i"].T + cell["b_i"])
    cand = np.tanh(z @ cell["W_C"].T + cell["b_C"])
    o = expit(z @ cell["W_o"].T + cell["b_o"])
    c = f * prev.c + i * cand
    state = LstmState(o * np.tanh(c), c)
    if return_gates:
        return state, {"f": f, "i": i, "C": cand, "o": o}
    return state


def lstm_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Run a stacked-gate LSTM over ``x`` (B, T, d_in) from a zero state.

    Returns the hidden states (B, T, h) and a cache for :func:`lstm_backward`.
    """
    B, T, _ = x.shape
    h_dim = W.shape[0] // 4
    Wh, Wx = W[:, :h_dim], W[:, h_dim:]
    pre_x = x @ Wx.T + b                      # input part of every gate, all steps
    H = np.empty((B, T, h_dim))
    C = np.empty((B, T, h_dim))
    acts = np.empty((B, T, 4 * h_dim))
    h = np.zeros((B, h_dim))
    c = np.zeros((B, h_dim))
    for t in range(T):
        a = pre_x[:, t] + h @ Wh.T
        g = acts[:, t]
        g[:, :2 * h_dim] = expit(a[:, :2 * h_dim])
        g[:, 2 * h_dim:3 * h_dim] = np.tanh(a[:, 2 * h_dim:3 * h_dim])
        g[:, 3 * h_dim:] = expit(a[:, 3 * h_dim:])
        c = g[:, :h_dim] * c + g[:, h_dim:2 * h_dim] * g[:, 2 * h_dim:3 * h_dim]
        h = g[:, 3 * h_dim:] * np.tanh(c)
        C[:, t] = c
        H[:, t] = h
    return H, (x, W, H, C, acts)


def lstm_backward(dH: np.ndarray, cache):
    """Gradients w.r.t. input, stacked weights and bias given dLoss/dH."""
    x, W, H, C, acts = cache
    B, T, _ = x.shape
    n = W.shape[0] // 4
    Wh = W[:, :n]
    dacts = np.empty_like(acts)
    dh_next = np.zeros((B, n))
    dc_next = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        g = acts[:, t]
        f, i, cand, o = g[:, :n], g[:, n:2 * n], g[:, 2 * n:3 * n], g[:, 3 * n:]
        tc = np.tanh(C[:, t])
        c_prev = C[:, t - 1] if t > 0 else 0.0
        dh = dH[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = dacts[:, t]
        da[:, :n] = dc * c_prev * f * (1.0 - f)
        da[:, n:2 * n] = dc * cand * i * (1.0 - i)
        da[:, 2 * n:3 * n] = dc * i * (1.0 - cand * cand)
        da[:, 3 * n:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ Wh
    h_prev = np.concatenate([np.zeros((B, 1, n)), H[:, :-1]], axis=1)
    flat = dacts.reshape(B * T, 4 * n)
    dW = np.concatenate([flat.T @ h_prev.reshape(B * T, n),
                         flat.T @ x.reshape(B * T, -1)], axis=1)
    db = flat.sum(axis=0)
    dx = dacts @ W[:, n:]
    return dx, dW, db

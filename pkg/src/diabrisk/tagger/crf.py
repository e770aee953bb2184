"""Linear-chain CRF over per-step emission scores.

The transition matrix ``A`` has shape (K+2, K+2): rows/columns ``0..K-1`` are
tags, ``K`` is a virtual START state and ``K+1`` a virtual STOP state. A path
``y`` scores

    A[START, y_0] + sum_t E[t, y_t] + sum_{t>0} A[y_{t-1}, y_t] + A[y_{T-1}, STOP]

All routines accept a single sequence (T, K) or a batch (B, T, K) of
equal-length sequences.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _batched(emissions):
    e = np.asarray(emissions, dtype=float)
    if e.ndim == 2:
        return e[None], True
    return e, False


def _parts(A, K):
    return A[:K, :K], A[K, :K], A[:K, K + 1]


def path_score(emissions: np.ndarray, A: np.ndarray, tags: Sequence[int]) -> float:
    e = np.asarray(emissions, dtype=float)
    T, K = e.shape
    y = np.asarray(tags)
    s = A[K, y[0]] + e[np.arange(T), y].sum() + A[y[-1], K + 1]
    return float(s + A[y[:-1], y[1:]].sum())


def forward_scores(emissions, A) -> np.ndarray:
    e, _ = _batched(emissions)
    B, T, K = e.shape
    trans, start, _ = _parts(A, K)
    alpha = np.empty_like(e)
    alpha[:, 0] = start + e[:, 0]
    for t in range(1, T):
        alpha[:, t] = logsumexp(alpha[:, t - 1, :, None] + trans, axis=1) + e[:, t]
    return alpha


def backward_scores(emissions, A) -> np.ndarray:
    e, _ = _batched(emissions)
    B, T, K = e.shape
    trans, _, stop = _parts(A, K)
    beta = np.empty_like(e)
    beta[:, T - 1] = stop
    for t in range(T - 2, -1, -1):
        beta[:, t] = logsumexp(trans + (e[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
    return beta


def crf_log_partition(emissions, A):
    """log Z by the forward recursion in log space."""
    e, single = _batched(emissions)
    K = e.shape[2]
    alpha = forward_scores(e, A)
    log_z = logsumexp(alpha[:, -1] + A[:K, K + 1], axis=1)
    return float(log_z[0]) if single else log_z


def gold_scores(e: np.ndarray, A: np.ndarray, tags: np.ndarray) -> np.ndarray:
    B, T, K = e.shape
    rows = np.arange(B)[:, None]
    s = e[rows, np.arange(T)[None, :], tags].sum(axis=1)
    s += A[K, tags[:, 0]] + A[tags[:, -1], K + 1]
    if T > 1:
        s += A[tags[:, :-1], tags[:, 1:]].sum(axis=1)
    return s


def _check_tags(tags, shape):
    y = np.asarray(tags)
    if y.ndim == 1:
        y = y[None]
    B, T, K = shape
    if y.shape != (B, T):
        raise ValueError(f"gold tags shape {y.shape} does not match emissions {(B, T)}")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= K:
        raise ValueError("gold tags must be integer indices in [0, K)")
    return y


def crf_nll(emissions, A, tags):
    """-log P(tags | emissions) = log Z - score(tags)."""
    e, single = _batched(emissions)
    y = _check_tags(tags, e.shape)
    nll = crf_log_partition(e, A) - gold_scores(e, A, y)
    return float(nll[0]) if single else nll


def crf_nll_and_grads(emissions, A, tags):
    """Per-sequence NLL plus summed gradients w.r.t. emissions and ``A``.

    The emission gradient is the tag marginal minus the gold indicator.
    """
    e, single = _batched(emissions)
    y = _check_tags(tags, e.shape)
    B, T, K = e.shape
    trans, _, stop = _parts(A, K)
    alpha = forward_scores(e, A)
    beta = backward_scores(e, A)
    log_z = logsumexp(alpha[:, -1] + stop, axis=1)
    nll = log_z - gold_scores(e, A, y)

    marg = np.exp(alpha + beta - log_z[:, None, None])
    gold = np.zeros_like(e)
    gold[np.arange(B)[:, None], np.arange(T)[None, :], y] = 1.0
    d_e = marg - gold

    dA = np.zeros_like(A, dtype=float)
    if T > 1:
        pair = np.exp(alpha[:, :-1, :, None] + trans + (e[:, 1:] + beta[:, 1:])[:, :, None, :]
                      - log_z[:, None, None, None])
        dA[:K, :K] = pair.sum(axis=(0, 1))
        np.add.at(dA, (y[:, :-1].ravel(), y[:, 1:].ravel()), -1.0)
    dA[K, :K] = d_e[:, 0].sum(axis=0)
    dA[:K, K + 1] = d_e[:, -1].sum(axis=0)
    if single:
        return float(nll[0]), d_e[0], dA
    return nll, d_e, dA


def viterbi(emissions, A):
    """Best path; ties go to the smaller tag index at every backpointer."""
    e, single = _batched(emissions)
    B, T, K = e.shape
    trans, start, stop = _parts(A, K)
    delta = start + e[:, 0]
    back = np.zeros((B, T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, :, None] + trans
        back[:, t] = np.argmax(cand, axis=1)
        delta = np.max(cand, axis=1) + e[:, t]
    final = delta + stop
    path = np.empty((B, T), dtype=np.int64)
    path[:, -1] = np.argmax(final, axis=1)
    for t in range(T - 1, 0, -1):
        path[:, t - 1] = back[np.arange(B), t, path[:, t]]
    best = final[np.arange(B), path[:, -1]]
    if single:
        return path[0].tolist(), float(best[0])
    return path, best


def bio_constraints(tag_set: Sequence[str]) -> np.ndarray:
    """Additive (K+2, K+2) mask: 0 where a transition is BIO-legal, -inf otherwise."""
    K = len(tag_set)
    mask = np.zeros((K + 2, K + 2))
    for j, tag in enumerate(tag_set):
        if not tag.startswith("I-"):
            continue
        kind = tag[2:]
        mask[K, j] = -np.inf
        for i, prev in enumerate(tag_set):
            if prev not in (f"B-{kind}", f"I-{kind}"):
                mask[i, j] = -np.inf
    return mask

"""BiLSTM-CRF parameters, forward pass and exact gradients."""
from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from typing import Sequence

import numpy as np

from . import crf
from .lstm import GATES, lstm_backward, lstm_forward, stack_gates

TaggerParams = dict  # name -> np.ndarray


@dataclass
class TrainConfig:
    embed_dim: int = 32
    hidden_units: int = 32
    num_layers: int = 1
    bidirectional: bool = True
    use_crf: bool = True
    constrained: bool = True      # hard BIO transitions when decoding
    learning_rate: float = 0.001
    batch_size: int = 32
    dropout_rate: float = 0.5
    max_epochs: int = 30
    patience: int = 3
    grad_clip: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    vocab_size: int = 5000
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        for name in ("embed_dim", "hidden_units", "num_layers", "batch_size",
                     "max_epochs", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def directions(cfg: TrainConfig) -> tuple[str, ...]:
    return ("fwd", "bwd") if cfg.bidirectional else ("fwd",)


def output_dim(cfg: TrainConfig) -> int:
    return cfg.hidden_units * len(directions(cfg))


def cell_weights(params: TaggerParams, layer: int, direction: str) -> dict[str, np.ndarray]:
    prefix = f"lstm.{layer}.{direction}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def init_params(cfg: TrainConfig, vocab_size: int, n_tags: int, seed: int) -> TaggerParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget bias 1, zero transitions."""
    rng = np.random.default_rng(seed)
    h = cfg.hidden_units

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    # lookup table: fan_in of one row selection is 1
    params = {"embed": uniform((vocab_size, cfg.embed_dim), 1)}
    d_in = cfg.embed_dim
    for layer in range(cfg.num_layers):
        for d in directions(cfg):
            for g in GATES:
                params[f"lstm.{layer}.{d}.W_{g}"] = uniform((h, h + d_in), h + d_in)
            for g in GATES:
                params[f"lstm.{layer}.{d}.b_{g}"] = np.full(h, 1.0 if g == "f" else 0.0)
        d_in = output_dim(cfg)
    params["proj.W"] = uniform((output_dim(cfg), n_tags), output_dim(cfg))
    params["proj.b"] = np.zeros(n_tags)
    if cfg.use_crf:
        params["crf.A"] = np.zeros((n_tags + 2, n_tags + 2))
    return params


def dropout_mask(shape, rate: float, rng) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def bilstm_forward(params: TaggerParams, cfg: TrainConfig, x: np.ndarray,
                   train: bool = False, rng=None):
    """Stacked (Bi)LSTM over embedded input ``x`` (B, T, d) or (T, d).

    Row t of the output is ``[h_t forward, h_t backward]``. Dropout hits only
    the final output and only when ``train`` is set. Returns (output, cache).
    """
    single = x.ndim == 2
    inp = x[None] if single else x
    caches = []
    for layer in range(cfg.num_layers):
        outs, layer_cache = [], []
        for d in directions(cfg):
            W, b = stack_gates(cell_weights(params, layer, d))
            seq = inp if d == "fwd" else inp[:, ::-1]
            H, cache = lstm_forward(seq, W, b)
            outs.append(H if d == "fwd" else H[:, ::-1])
            layer_cache.append(cache)
        caches.append(layer_cache)
        inp = np.concatenate(outs, axis=-1)
    mask = None
    if train and cfg.dropout_rate > 0:
        if rng is None:
            raise ValueError("train-mode dropout needs a random generator")
        mask = dropout_mask(inp.shape, cfg.dropout_rate, rng)
        inp = inp * mask
    out = inp[0] if single else inp
    return out, (caches, mask)


def emissions(hidden: np.ndarray, P: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return hidden @ P + bias


def _bilstm_backward(params, cfg, d_out, cache, grads):
    caches, mask = cache
    if mask is not None:
        d_out = d_out * mask
    h = cfg.hidden_units
    for layer in range(cfg.num_layers - 1, -1, -1):
        d_in = 0.0
        for j, d in enumerate(directions(cfg)):
            dH = d_out[..., j * h:(j + 1) * h]
            if d == "bwd":
                dH = dH[:, ::-1]
            dx, dW, db = lstm_backward(dH, caches[layer][j])
            if d == "bwd":
                dx = dx[:, ::-1]
            d_in = d_in + dx
            prefix = f"lstm.{layer}.{d}."
            for k, g in enumerate(GATES):
                grads[prefix + f"W_{g}"] += dW[k * h:(k + 1) * h]
                grads[prefix + f"b_{g}"] += db[k * h:(k + 1) * h]
        d_out = d_in
    return d_out


def _softmax_nll_and_grad(e: np.ndarray, y: np.ndarray):
    logp = e - crf.logsumexp(e, axis=-1)[..., None]
    B, T, _ = e.shape
    picked = logp[np.arange(B)[:, None], np.arange(T)[None, :], y]
    d_e = np.exp(logp)
    d_e[np.arange(B)[:, None], np.arange(T)[None, :], y] -= 1.0
    return -picked.sum(axis=1), d_e


def sequence_loss(params, cfg, e, y):
    """Per-sentence loss for emissions (B, T, K) and gold indices (B, T)."""
    if cfg.use_crf:
        return crf.crf_nll(e, params["crf.A"], y)
    logp = e - crf.logsumexp(e, axis=-1)[..., None]
    B, T, _ = e.shape
    return -logp[np.arange(B)[:, None], np.arange(T)[None, :], y].sum(axis=1)


def _group_by_length(ids: Sequence[np.ndarray]):
    groups = {}
    for i, s in enumerate(ids):
        groups.setdefault(len(s), []).append(i)
    return [groups[n] for n in sorted(groups)]


def batch_loss(params: TaggerParams, cfg: TrainConfig, ids, tags) -> float:
    """Mean loss over sentences, eval mode (no dropout)."""
    total = 0.0
    for group in _group_by_length(ids):
        x = params["embed"][np.stack([ids[i] for i in group])]
        y = np.stack([tags[i] for i in group])
        hidden, _ = bilstm_forward(params, cfg, x)
        e = emissions(hidden, params["proj.W"], params["proj.b"])
        total += float(sequence_loss(params, cfg, e, y).sum())
    return total / len(ids)


def gradients(params: TaggerParams, cfg: TrainConfig, ids, tags,
              train: bool = False, rng=None) -> tuple[float, TaggerParams]:
    """Mean loss over the batch and its exact gradient for every tensor.

    ``ids`` and ``tags`` are lists of integer arrays; sentences are grouped by
    length so the recurrence never sees padding.
    """
    if len(ids) == 0:
        raise ValueError("empty batch")
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    total = 0.0
    n = len(ids)
    for group in _group_by_length(ids):
        tok = np.stack([ids[i] for i in group])
        y = np.stack([tags[i] for i in group])
        x = params["embed"][tok]
        hidden, cache = bilstm_forward(params, cfg, x, train=train, rng=rng)
        e = emissions(hidden, params["proj.W"], params["proj.b"])
        if cfg.use_crf:
            nll, d_e, dA = crf.crf_nll_and_grads(e, params["crf.A"], y)
            grads["crf.A"] += dA / n
        else:
            nll, d_e = _softmax_nll_and_grad(e, y)
        if not np.all(np.isfinite(nll)):
            raise FloatingPointError(
                f"non-finite loss for sentences of length {tok.shape[1]}")
        total += float(nll.sum())
        d_e = d_e / n
        grads["proj.W"] += np.einsum("btd,btk->dk", hidden, d_e)
        grads["proj.b"] += d_e.sum(axis=(0, 1))
        d_x = _bilstm_backward(params, cfg, d_e @ params["proj.W"].T, cache, grads)
        np.add.at(grads["embed"], tok.ravel(), d_x.reshape(-1, d_x.shape[-1]))
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return total / n, grads


def decode_scores(params: TaggerParams, cfg: TrainConfig, ids: np.ndarray) -> np.ndarray:
    """Emission scores for one sentence in eval mode (softmax log-probs without a CRF)."""
    hidden, _ = bilstm_forward(params, cfg, params["embed"][ids])
    e = emissions(hidden, params["proj.W"], params["proj.b"])
    if not cfg.use_crf:
        e = e - crf.logsumexp(e, axis=-1)[..., None]
    return e


def decode(params: TaggerParams, cfg: TrainConfig, ids: np.ndarray,
           constraints: np.ndarray | None = None) -> list[int]:
    e = decode_scores(params, cfg, ids)
    K = e.shape[-1]
    A = params["crf.A"] if cfg.use_crf else np.zeros((K + 2, K + 2))
    if constraints is not None:
        A = A + constraints
    path, _ = crf.viterbi(e, A)
    return path

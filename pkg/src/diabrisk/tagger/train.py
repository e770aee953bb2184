"""Adam training with early stopping, decoding and JSON persistence."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import TaggedSentence, repair_bio, spans_from_bio
from ..features import Vocabulary, build_vocab
from . import crf
from .model import TaggerParams, TrainConfig, batch_loss, decode, gradients, init_params

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}{': ' + detail if detail else ''}")
        self.epoch = epoch


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: TaggerParams) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(params: TaggerParams, grads: dict, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update after global-norm clipping."""
    grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
    t = state.t + 1
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = cfg.beta1 * state.m[k] + (1 - cfg.beta1) * g
        v[k] = cfg.beta2 * state.v[k] + (1 - cfg.beta2) * g * g
        m_hat = m[k] / (1 - cfg.beta1 ** t)
        v_hat = v[k] / (1 - cfg.beta2 ** t)
        new_params[k] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m, v, t)


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` bad epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best_loss:
            self.best_loss, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class Tagger:
    """A trained tagger: parameters plus everything needed to apply them."""
    params: TaggerParams
    config: TrainConfig
    vocab: Vocabulary
    tag_set: tuple[str, ...]
    extra: dict = field(default_factory=dict)

    @property
    def constraints(self):
        return crf.bio_constraints(self.tag_set) if self.config.constrained else None

    def encode_tags(self, tags: Sequence[str]) -> np.ndarray:
        index = {t: i for i, t in enumerate(self.tag_set)}
        return np.array([index[t] for t in tags], dtype=np.int64)

    def tag(self, tokens: Sequence[str]) -> list[str]:
        if len(tokens) == 0:
            raise ValueError("cannot tag an empty sentence")
        path = decode(self.params, self.config, self.vocab.encode(tokens), self.constraints)
        return [self.tag_set[i] for i in path]

    def tag_many(self, sentences) -> list[list[str]]:
        return [self.tag(getattr(s, "tokens", s)) for s in sentences]

    def loss(self, sentences: Sequence[TaggedSentence]) -> float:
        ids = [self.vocab.encode(s.tokens) for s in sentences]
        tags = [self.encode_tags(s.tags) for s in sentences]
        return batch_loss(self.params, self.config, ids, tags)

    # persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "bilstm_crf_tagger",
            "config": self.config.to_dict(),
            "tag_set": list(self.tag_set),
            "vocab": list(self.vocab.tokens),
            "vocab_max_size": self.vocab.max_size,
            "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                        for k, v in self.params.items()},
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tagger":
        check_schema(d, "bilstm_crf_tagger")
        params = {k: np.asarray(t["data"], dtype=float).reshape(t["shape"])
                  for k, t in d["tensors"].items()}
        return cls(params, TrainConfig.from_dict(d["config"]),
                   Vocabulary(d["vocab"], d["vocab_max_size"]), tuple(d["tag_set"]),
                   d.get("extra", {}))

    def save(self, path) -> None:
        write_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "Tagger":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def check_schema(d: dict, kind: str) -> None:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"schema_version {d.get('schema_version')!r} != supported {SCHEMA_VERSION}")
    if d.get("kind") != kind:
        raise ValueError(f"expected a {kind} file, got {d.get('kind')!r}")


def write_json(obj, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    tmp.replace(path)


def _batches(lengths: Sequence[int], batch_size: int, rng) -> list[list[int]]:
    """Length buckets, shuffled within bucket, chunked, then batch order shuffled."""
    buckets = {}
    for i, n in enumerate(lengths):
        buckets.setdefault(n, []).append(i)
    batches = []
    for n in sorted(buckets):
        members = np.array(buckets[n])[rng.permutation(len(buckets[n]))]
        batches += [members[i:i + batch_size].tolist()
                    for i in range(0, len(members), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)   # dicts with epoch, train_loss, val_loss
    best_epoch: int = 0
    stop_epoch: int = 0
    stopped_early: bool = False

    def to_dict(self):
        return {"epochs": self.epochs, "best_epoch": self.best_epoch,
                "stop_epoch": self.stop_epoch, "stopped_early": self.stopped_early}


def train(train_sents: Sequence[TaggedSentence], val_sents: Sequence[TaggedSentence],
          tag_set: Sequence[str], cfg: TrainConfig, vocab: Vocabulary | None = None,
          on_epoch=None) -> tuple[Tagger, TrainLog]:
    """Minibatch Adam on the sequence loss; returns the best-validation tagger."""
    cfg.validate()
    if not train_sents or not val_sents:
        raise ValueError("train and validation splits must be non-empty")
    vocab = vocab or build_vocab(train_sents, cfg.vocab_size)
    tag_set = tuple(tag_set)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, len(vocab), len(tag_set), int(rng.integers(2 ** 31)))
    model = Tagger(params, cfg, vocab, tag_set)

    ids = [vocab.encode(s.tokens) for s in train_sents]
    tags = [model.encode_tags(s.tags) for s in train_sents]
    val_ids = [vocab.encode(s.tokens) for s in val_sents]
    val_tags = [model.encode_tags(s.tags) for s in val_sents]

    state = AdamState.zeros_like(params)
    stopper = EarlyStopping(cfg.patience)
    best = params
    history = TrainLog()
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for batch in _batches([len(s) for s in ids], cfg.batch_size, rng):
            loss, grads = gradients(params, cfg, [ids[i] for i in batch],
                                    [tags[i] for i in batch], train=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            params, state = adam_step(params, grads, state, cfg)
            total += loss * len(batch)
        val_loss = batch_loss(params, cfg, val_ids, val_tags)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "validation loss is not finite")
        history.epochs.append({"epoch": epoch, "train_loss": total / len(ids),
                               "val_loss": val_loss})
        log.info("epoch %d train %.4f val %.4f", epoch, total / len(ids), val_loss)
        if on_epoch is not None:
            on_epoch(epoch, params)
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best = params
        history.stop_epoch = epoch
        if stop:
            history.stopped_early = True
            break
    history.best_epoch = stopper.best_epoch
    model.params = best
    return model, history


def token_accuracy(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> float:
    hits = total = 0
    for g, p in zip(gold, pred):
        hits += sum(a == b for a, b in zip(g, p))
        total += len(g)
    return hits / total if total else float("nan")


def evaluate_tagger(model: Tagger, sentences: Sequence[TaggedSentence]) -> dict:
    from ..evalx import entity_prf

    pred = model.tag_many(sentences)
    gold = [s.tags for s in sentences]
    prf = entity_prf([spans_from_bio(g) for g in gold], [spans_from_bio(repair_bio(p)) for p in pred])
    return {"token_accuracy": token_accuracy(gold, pred), "entity": prf}

"""Text and structured features fused into one numeric vector per patient."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EntitySpan, SchemaError

UNK = "<unk>"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # index order, tokens[0] == UNK
    max_size: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens or self.tokens[0] != UNK:
            raise ValueError("vocabulary must start with the UNK token")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self._index.get(t, 0) for t in tokens], dtype=np.int64)


def build_vocab(sentences: Iterable, max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens; ties go to the smaller token.

    ``sentences`` may hold token lists or objects with a ``tokens`` attribute.
    """
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    counts = Counter()
    for s in sentences:
        counts.update(getattr(s, "tokens", s))
    counts.pop(UNK, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary((UNK, *(t for t, _ in ranked[:max_size])), max_size)


def bow_vector(tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    return np.bincount(vocab.encode(tokens), minlength=len(vocab)).astype(float)


def entity_features(spans: Iterable[EntitySpan], kinds: Sequence[str]) -> np.ndarray:
    position = {k: i for i, k in enumerate(kinds)}
    out = np.zeros(len(kinds))
    for span in spans:
        if span.kind not in position:
            raise SchemaError(f"entity kind {span.kind!r} not in {list(kinds)}")
        out[position[span.kind]] += 1
    return out


@dataclass(frozen=True)
class ScalingStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, structured: np.ndarray) -> "ScalingStats":
        """Column means/stds over training rows; NaN marks a missing value."""
        x = np.asarray(structured, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("need a non-empty 2-D training block")
        observed = ~np.isnan(x)
        counts = observed.sum(axis=0)
        filled = np.where(observed, x, 0.0)
        mean = np.divide(filled.sum(axis=0), counts, out=np.zeros(x.shape[1]), where=counts > 0)
        # population std of the imputed column, so scaled training columns have unit std
        imputed = np.where(observed, x, mean)
        std = imputed.std(axis=0)
        return cls(mean, std)

    def transform(self, structured: np.ndarray) -> np.ndarray:
        x = np.asarray(structured, dtype=float)
        if x.shape[-1] != self.mean.shape[0]:
            raise SchemaError(
                f"structured block has {x.shape[-1]} columns, stats have {self.mean.shape[0]}")
        x = np.where(np.isnan(x), self.mean, x)
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (x - self.mean) / safe, 0.0)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


@dataclass(frozen=True)
class FusedRecord:
    patient_id: str
    x: np.ndarray
    label: int


def structured_array(values: Sequence[float | None]) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def fuse(bow: np.ndarray, ent: np.ndarray, structured, stats: ScalingStats) -> np.ndarray:
    """[BoW | entity counts | scaled structured]; missing values take the training mean."""
    if isinstance(structured, (list, tuple)):
        structured = structured_array(structured)
    scaled = stats.transform(structured)
    return np.concatenate([np.asarray(bow, float), np.asarray(ent, float), scaled], axis=-1)


# ---------------------------------------------------------------------------
# Fused dataset: raw blocks before scaling, written by the extraction stage


@dataclass
class FusedDataset:
    patient_ids: list[str]
    text: np.ndarray          # (n, vocab + kinds) raw counts
    structured: np.ndarray    # (n, S) raw values, NaN = missing
    y: np.ndarray             # (n,) in {0, 1}
    text_columns: list[str]
    structured_columns: list[str]

    def __post_init__(self):
        n = len(self.patient_ids)
        self.text = np.asarray(self.text, dtype=float).reshape(n, len(self.text_columns))
        self.structured = np.asarray(self.structured, dtype=float).reshape(
            n, len(self.structured_columns))
        self.y = np.asarray(self.y, dtype=int).reshape(n)

    def __len__(self):
        return len(self.patient_ids)

    @property
    def columns(self) -> list[str]:
        return [*self.text_columns, *self.structured_columns]

    def subset(self, idx) -> "FusedDataset":
        idx = np.asarray(idx, dtype=int)
        return FusedDataset([self.patient_ids[i] for i in idx], self.text[idx],
                            self.structured[idx], self.y[idx],
                            list(self.text_columns), list(self.structured_columns))

    def matrix(self, stats: ScalingStats) -> np.ndarray:
        return fuse(self.text, np.zeros((len(self), 0)), self.structured, stats)

    def records(self, stats: ScalingStats) -> list[FusedRecord]:
        x = self.matrix(stats)
        return [FusedRecord(p, x[i], int(self.y[i])) for i, p in enumerate(self.patient_ids)]

    def schema(self) -> dict:
        bow = [c for c in self.text_columns if c.startswith("bow:")]
        ent = [c for c in self.text_columns if c.startswith("ent:")]
        return {
            "schema_version": 1,
            "blocks": {"bow": len(bow), "entity": len(ent),
                       "structured": len(self.structured_columns)},
            "columns": self.columns,
            "label": "diabetes",
        }


def write_fused_csv(ds: FusedDataset, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", *ds.columns, "diabetes"])
    for i, pid in enumerate(ds.patient_ids):
        text = [repr(float(v)) for v in ds.text[i]]
        struct = ["" if np.isnan(v) else repr(float(v)) for v in ds.structured[i]]
        w.writerow([pid, *text, *struct, int(ds.y[i])])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_fused_csv(path) -> FusedDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return FusedDataset([], np.zeros((0, 0)), np.zeros((0, 0)), [], [], [])
    header = rows[0]
    if header[0] != "patient_id" or header[-1] != "diabetes":
        raise SchemaError(f"{path}: header must start with patient_id and end with diabetes")
    cols = header[1:-1]
    for c in cols:
        if c.split(":", 1)[0] not in ("bow", "ent", "struct"):
            raise SchemaError(f"{path}: column {c!r} lacks a block prefix")
    n_text = sum(1 for c in cols if not c.startswith("struct:"))
    if any(c.startswith("struct:") for c in cols[:n_text]):
        raise SchemaError(f"{path}: structured columns must come last")
    ids, values, y = [], [], []
    for row in rows[1:]:
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {row[:1]} has {len(row)} fields, expected {len(header)}")
        ids.append(row[0])
        values.append([np.nan if v == "" else float(v) for v in row[1:-1]])
        y.append(int(row[-1]))
    x = np.array(values, dtype=float).reshape(len(ids), len(cols))
    return FusedDataset(ids, x[:, :n_text], x[:, n_text:], y, cols[:n_text], cols[n_text:])


def write_schema_json(ds: FusedDataset, path) -> None:
    Path(path).write_text(json.dumps(ds.schema(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# SMOTE


@dataclass
class SmoteResult:
    x: np.ndarray
    y: np.ndarray
    # one row per synthetic sample: (parent index, neighbour index, t); indices into the input
    origin: np.ndarray


def _nearest(points: np.ndarray, k: int) -> np.ndarray:
    sq = (points ** 2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * points @ points.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote(x: np.ndarray, y: np.ndarray, k: int = 5, seed=0) -> SmoteResult:
    """Oversample the minority class up to the majority count.

    Synthetic rows are appended after the originals. ``seed`` may also be a
    ``numpy.random.Generator``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if k < 1:
        raise ValueError("k must be at least 1")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise ValueError("SMOTE needs exactly two classes present")
    minority = classes[np.argmin(counts)]
    need = int(counts.max() - counts.min())
    if need == 0:
        return SmoteResult(x.copy(), y.copy(), np.zeros((0, 3)))
    rng = seed if isinstance(seed, np.random.Generator) or hasattr(seed, "integers") \
        else np.random.default_rng(seed)

    pool = np.flatnonzero(y == minority)
    pts = x[pool]
    if len(pool) == 1:
        new = np.repeat(pts, need, axis=0)
        origin = np.column_stack([np.full(need, pool[0]), np.full(need, pool[0]), np.zeros(need)])
    else:
        nn = _nearest(pts, min(k, len(pool) - 1))
        parent = rng.integers(0, len(pool), size=need)
        pick = rng.integers(0, nn.shape[1], size=need)
        neighbour = nn[parent, pick]
        t = rng.random(size=need)
        new = pts[parent] + t[:, None] * (pts[neighbour] - pts[parent])
        origin = np.column_stack([pool[parent], pool[neighbour], t])
    return SmoteResult(np.vstack([x, new]), np.concatenate([y, np.full(need, minority)]), origin)

"""Annotated clinical notes, structured records and a seeded synthetic corpus."""
from __future__ import annotations

import csv
import io
import math
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

OUTSIDE = "O"
MISSING = None  # explicit marker for a missing structured value


class SchemaError(ValueError):
    """Input does not conform to the corpus schema."""


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    patient_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if not self.tokens:
            raise SchemaError("sentence has no tokens")
        if len(self.tokens) != len(self.tags):
            raise SchemaError(
                f"{len(self.tokens)} tokens but {len(self.tags)} tags")


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int
    kind: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise SchemaError(f"bad span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class StructuredRecord:
    patient_id: str
    values: tuple[float | None, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.label not in (0, 1):
            raise SchemaError(f"label must be 0 or 1, got {self.label!r}")


def make_tag_set(kinds: Sequence[str]) -> tuple[str, ...]:
    tags = [OUTSIDE]
    for kind in kinds:
        tags += [f"B-{kind}", f"I-{kind}"]
    return tuple(tags)


def entity_kinds(tag_set: Sequence[str]) -> tuple[str, ...]:
    """Entity types in tag-set order, e.g. ("DISEASE", "SYMPTOM")."""
    return tuple(t[2:] for t in tag_set if t.startswith("B-"))


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[TaggedSentence, ...]
    records: tuple[StructuredRecord, ...]
    schema: tuple[str, ...]
    tag_set: tuple[str, ...]

    def __post_init__(self):
        for name in ("sentences", "records", "schema", "tag_set"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if OUTSIDE not in self.tag_set:
            raise SchemaError("tag set must contain O")
        kinds = {t[2:] for t in self.tag_set if t != OUTSIDE}
        for kind in kinds:
            if f"B-{kind}" not in self.tag_set or f"I-{kind}" not in self.tag_set:
                raise SchemaError(f"tag set not closed under B-/I- for {kind}")
        for t in self.tag_set:
            if t != OUTSIDE and t[:2] not in ("B-", "I-"):
                raise SchemaError(f"malformed tag {t!r}")
        ids = {r.patient_id for r in self.records}
        if len(ids) != len(self.records):
            raise SchemaError("duplicate patient_id in records")
        for s in self.sentences:
            if s.patient_id not in ids:
                raise SchemaError(f"sentence for unknown patient {s.patient_id!r}")
        for r in self.records:
            if len(r.values) != len(self.schema):
                raise SchemaError(
                    f"record {r.patient_id} has {len(r.values)} values, "
                    f"schema has {len(self.schema)}")

    @property
    def patient_ids(self) -> list[str]:
        return [r.patient_id for r in self.records]

    @property
    def kinds(self) -> tuple[str, ...]:
        return entity_kinds(self.tag_set)

    def sentences_for(self, patient_id: str) -> list[TaggedSentence]:
        return [s for s in self.sentences if s.patient_id == patient_id]

    def subset(self, patient_ids: Sequence[str]) -> "Corpus":
        """Restrict to the given patients, keeping the order of ``patient_ids``."""
        by_id = {r.patient_id: r for r in self.records}
        wanted = list(patient_ids)
        keep = set(wanted)
        return Corpus(
            sentences=[s for s in self.sentences if s.patient_id in keep],
            records=[by_id[p] for p in wanted],
            schema=self.schema,
            tag_set=self.tag_set,
        )


# ---------------------------------------------------------------------------
# BIO helpers


def validate_bio(tags: Sequence[str], tag_set: Sequence[str]) -> tuple[bool, int | None]:
    """Check BIO well-formedness.

    Returns ``(True, None)`` or ``(False, index)`` where ``index`` is the first
    offending position. Tags outside ``tag_set`` raise :class:`SchemaError`.
    """
    allowed = set(tag_set)
    prev = OUTSIDE
    for i, tag in enumerate(tags):
        if tag not in allowed:
            raise SchemaError(f"unknown tag {tag!r} at index {i}")
        if tag.startswith("I-"):
            kind = tag[2:]
            if prev not in (f"B-{kind}", f"I-{kind}"):
                return False, i
        prev = tag
    return True, None


def spans_from_bio(tags: Sequence[str] | TaggedSentence) -> list[EntitySpan]:
    if isinstance(tags, TaggedSentence):
        tags = tags.tags
    spans = []
    start = kind = None
    for i, tag in enumerate(tags):
        if tag.startswith("I-"):
            if kind != tag[2:]:
                raise SchemaError(f"invalid BIO at index {i}: {tag!r}")
            continue
        if kind is not None:
            spans.append(EntitySpan(start, i, kind))
            start = kind = None
        if tag.startswith("B-"):
            start, kind = i, tag[2:]
        elif tag != OUTSIDE:
            raise SchemaError(f"malformed tag {tag!r} at index {i}")
    if kind is not None:
        spans.append(EntitySpan(start, len(tags), kind))
    return spans


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Turn every I-X that cannot continue an entity into B-X."""
    out, prev = [], OUTSIDE
    for tag in tags:
        if tag.startswith("I-") and prev not in (f"B-{tag[2:]}", tag):
            tag = "B-" + tag[2:]
        out.append(tag)
        prev = tag
    return out


def bio_from_spans(spans: Sequence[EntitySpan], length: int) -> list[str]:
    tags = [OUTSIDE] * length
    for span in sorted(spans):
        if span.end > length:
            raise SchemaError(f"span {span} exceeds length {length}")
        if any(t != OUTSIDE for t in tags[span.start:span.end]):
            raise SchemaError(f"overlapping span {span}")
        tags[span.start] = f"B-{span.kind}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.kind}"
    return tags


# ---------------------------------------------------------------------------
# Text cleaning and tokenization

_CONTROL = re.compile(r"[\x00-\x08\x0b-\x1f\x7f-\x9f]")
_PUNCT = "\"'()[]{}<>.,;:!?"


def clean_text(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    text = _CONTROL.sub(" ", text)
    return " ".join(text.split())


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing punctuation into tokens."""
    out = []
    for word in clean_text(text).split():
        lead, trail = [], []
        while word and word[0] in _PUNCT:
            lead.append(word[0])
            word = word[1:]
        while word and word[-1] in _PUNCT:
            trail.append(word[-1])
            word = word[:-1]
        out += lead
        if word:
            out.append(word)
        out += reversed(trail)
    return out


# ---------------------------------------------------------------------------
# Splitting


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(items: Sequence, train_ratio: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle then cut; the train part has round(ratio * n) items.

    ``items`` may be a :class:`Corpus`, in which case two corpora are returned.
    """
    if not 0 < train_ratio <= 1:
        raise ValueError(f"train_ratio must be in (0, 1], got {train_ratio}")
    corpus = items if isinstance(items, Corpus) else None
    seq = corpus.patient_ids if corpus is not None else list(items)
    n = len(seq)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(n)
    n_train = round_half_up(train_ratio * n)
    train = [seq[i] for i in order[:n_train]]
    test = [seq[i] for i in order[n_train:]]
    if corpus is not None:
        return corpus.subset(train), corpus.subset(test)
    return train, test


def kfold(n: int | Sequence, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded k-fold index partition; larger test folds come first."""
    n = n if isinstance(n, int) else len(n)
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = np.sort(order[start:start + size])
        train = np.sort(np.concatenate([order[:start], order[start + size:]]))
        folds.append((train, test))
        start += size
    return folds


# ---------------------------------------------------------------------------
# File formats


def write_conll(sentences: Sequence[TaggedSentence], path) -> None:
    buf = io.StringIO()
    for s in sentences:
        buf.write(f"# patient_id: {s.patient_id}\n")
        for tok, tag in zip(s.tokens, s.tags):
            buf.write(f"{tok}\t{tag}\n")
        buf.write("\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_conll(path) -> list[TaggedSentence]:
    sentences = []
    tokens, tags, pid = [], [], ""

    def flush():
        nonlocal tokens, tags
        if tokens:
            sentences.append(TaggedSentence(tokens, tags, pid))
        tokens, tags = [], []

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("# patient_id:"):
                flush()
                pid = line.split(":", 1)[1].strip()
            elif not line.strip():
                flush()
            else:
                parts = line.split("\t")
                if len(parts) != 2:
                    raise SchemaError(f"{path}:{lineno}: expected token<TAB>tag")
                tokens.append(parts[0])
                tags.append(parts[1])
    flush()
    return sentences


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_records_csv(records: Sequence[StructuredRecord], schema: Sequence[str], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", *schema, "diabetes"])
    for r in records:
        w.writerow([r.patient_id, *(_fmt(v) for v in r.values), r.label])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_records_csv(path) -> tuple[list[StructuredRecord], tuple[str, ...]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    if header[0] != "patient_id" or header[-1] != "diabetes":
        raise SchemaError(f"{path}: header must start with patient_id and end with diabetes")
    schema = tuple(header[1:-1])
    records = []
    for row in rows[1:]:
        if len(row) != len(header):
            raise SchemaError(f"{path}: row for {row[:1]} has {len(row)} fields")
        values = [None if v == "" else float(v) for v in row[1:-1]]
        records.append(StructuredRecord(row[0], values, int(row[-1])))
    return records, schema


def tag_set_from_sentences(sentences: Sequence[TaggedSentence]) -> tuple[str, ...]:
    kinds = []
    for s in sentences:
        for t in s.tags:
            if t != OUTSIDE and t[2:] not in kinds:
                kinds.append(t[2:])
    return make_tag_set(kinds)


def save_corpus(corpus: Corpus, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"conll": directory / "corpus.conll", "records": directory / "records.csv"}
    write_conll(corpus.sentences, paths["conll"])
    write_records_csv(corpus.records, corpus.schema, paths["records"])
    return paths


def load_corpus(directory, tag_set: Sequence[str] | None = None) -> Corpus:
    directory = Path(directory)
    sentences = read_conll(directory / "corpus.conll")
    records, schema = read_records_csv(directory / "records.csv")
    if tag_set is None:
        tag_set = tag_set_from_sentences(sentences)
    return Corpus(sentences, records, schema, tag_set)


# ---------------------------------------------------------------------------
# Synthetic generator

KINDS = ("DISEASE", "SYMPTOM", "TREATMENT")

LEXICON = {
    "DISEASE": [
        "diabetes mellitus", "type 2 diabetes", "hypertension", "fatty liver",
        "dyslipidemia", "obesity", "diabetic nephropathy", "prediabetes",
        "coronary heart disease", "hyperuricemia", "metabolic syndrome",
        "impaired glucose tolerance",
    ],
    "SYMPTOM": [
        "polyuria", "polydipsia", "excessive thirst", "blurred vision",
        "fatigue", "weight loss", "numbness in feet", "frequent urination",
        "slow wound healing", "dizziness", "nocturia", "tingling hands",
    ],
    "TREATMENT": [
        "metformin", "insulin therapy", "dietary counselling", "statin",
        "lifestyle modification", "amlodipine", "exercise program",
        "glipizide", "weight management plan",
    ],
}

# (phrase, kind the phrase introduces or None)
CONTEXT = {
    "DISEASE": ["history of", "diagnosed with", "known case of", "assessment :"],
    "SYMPTOM": ["complains of", "reports", "presents with", "denies"],
    "TREATMENT": ["started on", "continue", "recommended", "plan :"],
}
FILLER = [
    "patient seen in clinic today", "vital signs recorded", "follow up in three months",
    "family history noted", "no acute distress", "labs reviewed with patient",
    "routine health check", "non smoker", "alert and oriented", "sleeps well",
    "annual physical examination", "medication list reconciled",
]
NOISE_WORDS = [
    "pt", "w/", "hx", "f/u", "approx", "neg", "re", "noted", "today", "also",
    "mild", "stable", "per", "see", "above",
]

# name -> (negative mean, negative sd, positive mean shift in sd units)
FEATURES = {
    "age": (48.0, 12.0, 0.6),
    "bmi": (24.5, 3.5, 0.9),
    "fasting_glucose": (5.2, 0.6, 1.4),
    "systolic_bp": (122.0, 14.0, 0.4),
    "diastolic_bp": (78.0, 9.0, 0.3),
    "triglycerides": (1.5, 0.6, 0.5),
    "hdl_c": (1.35, 0.3, -0.4),
    "ldl_c": (2.9, 0.7, 0.2),
    "waist_circumference": (84.0, 9.0, 0.7),
    "alt": (24.0, 10.0, 0.3),
    "ast": (22.0, 8.0, 0.2),
    "total_cholesterol": (4.8, 0.9, 0.2),
}


@dataclass
class GeneratorConfig:
    """Settings for :func:`generate_synthetic_corpus`.

    Positives receive ``signal`` times more DISEASE/SYMPTOM mentions and
    structured means shifted by ``signal`` times the per-feature shift.
    """
    n_patients: int = 1000
    prevalence: float = 0.3
    entity_rate: float = 1.0
    noise: float = 0.05
    missing_rate: float = 0.03
    n_features: int = 8
    signal: float = 1.0
    min_segments: int = 3
    max_segments: int = 6
    kinds: tuple[str, ...] = field(default=KINDS)

    def validate(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if not 0 <= self.prevalence <= 1:
            raise ValueError("prevalence must lie in [0, 1]")
        if self.entity_rate < 0:
            raise ValueError("entity_rate must be non-negative")
        for name in ("noise", "missing_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.n_features < 1:
            raise ValueError("n_features must be positive")
        if not 1 <= self.min_segments <= self.max_segments:
            raise ValueError("need 1 <= min_segments <= max_segments")
        unknown = set(self.kinds) - set(LEXICON)
        if unknown:
            raise ValueError(f"no lexicon for entity kinds {sorted(unknown)}")


def feature_names(n: int) -> list[str]:
    names = list(FEATURES)[:n]
    names += [f"lab_{i:02d}" for i in range(len(names), n)]
    return names


def _structured(rng, label, n, cfg):
    values = []
    for name in feature_names(n):
        mean, sd, shift = FEATURES.get(name, (0.0, 1.0, 0.0))
        v = rng.normal(mean + label * cfg.signal * shift * sd, sd)
        values.append(None if rng.random() < cfg.missing_rate else round(float(v), 3))
    return values


def _note(rng, label, cfg):
    rates = {k: cfg.entity_rate * (1 + label * cfg.signal * (k != "TREATMENT"))
             for k in cfg.kinds}
    mentions = []
    for kind in cfg.kinds:
        mentions += [kind] * int(rng.poisson(rates[kind]))
    rng.shuffle(mentions)
    n_seg = int(rng.integers(cfg.min_segments, cfg.max_segments + 1))
    segments = [None] * max(n_seg - len(mentions), 0) + mentions
    rng.shuffle(segments)

    tokens, tags = [], []
    for seg in segments:
        if seg is None:
            words = FILLER[rng.integers(len(FILLER))].split()
            kind = None
        else:
            kind = seg
            words = CONTEXT[kind][rng.integers(len(CONTEXT[kind]))].split()
        for w in words:
            if rng.random() < cfg.noise:
                w = NOISE_WORDS[rng.integers(len(NOISE_WORDS))]
            tokens.append(w)
            tags.append(OUTSIDE)
        if kind is not None:
            phrase = LEXICON[kind][rng.integers(len(LEXICON[kind]))].split()
            tokens += phrase
            tags += [f"B-{kind}"] + [f"I-{kind}"] * (len(phrase) - 1)
        tokens.append(";" if rng.random() < 0.5 else ".")
        tags.append(OUTSIDE)
    return tokens, tags


def generate_synthetic_corpus(seed: int, config: GeneratorConfig | None = None) -> Corpus:
    cfg = config or GeneratorConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    n = cfg.n_patients
    n_pos = round_half_up(cfg.prevalence * n)
    labels = np.zeros(n, dtype=int)
    labels[rng.permutation(n)[:n_pos]] = 1

    schema = feature_names(cfg.n_features)
    width = len(str(n))
    sentences, records = [], []
    for i in range(n):
        pid = f"P{i + 1:0{width}d}"
        y = int(labels[i])
        records.append(StructuredRecord(pid, _structured(rng, y, cfg.n_features, cfg), y))
        tokens, tags = _note(rng, y, cfg)
        sentences.append(TaggedSentence(tokens, tags, pid))
    return Corpus(sentences, records, schema, make_tag_set(cfg.kinds))

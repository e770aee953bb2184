"""Pipeline configuration, profiles and per-stage seed derivation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .boosting import GbConfig
from .corpus import GeneratorConfig
from .tagger.model import TrainConfig

PROFILES = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass
class FeatureConfig:
    vocab_size: int = 500
    smote_k: int = 5


@dataclass
class LrConfig:
    C: float = 0.1
    tol: float = 1e-6
    max_iter: int = 1000


@dataclass
class EnsembleConfig:
    grid_step: float = 0.05
    tune: bool = True
    val_fraction: float = 0.2


@dataclass
class EvalConfig:
    train_ratio: float = 0.8
    k: int = 5
    threshold: float = 0.5


@dataclass
class PipelineConfig:
    profile: str = "desk"
    seed: int = 42
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    tagger: TrainConfig = field(default_factory=TrainConfig)
    gb: GbConfig = field(default_factory=GbConfig)
    lr: LrConfig = field(default_factory=LrConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "PipelineConfig":
        try:
            if self.profile not in PROFILES:
                raise ValueError(f"profile must be one of {PROFILES}")
            self.generator.validate()
            self.tagger.validate()
            self.gb.validate()
            if self.features.vocab_size < 1 or self.features.smote_k < 1:
                raise ValueError("vocab_size and smote_k must be positive")
            if self.lr.C <= 0 or self.lr.tol <= 0 or self.lr.max_iter < 1:
                raise ValueError("lr settings must be positive")
            if not 0 < self.ensemble.grid_step <= 1:
                raise ValueError("grid_step must lie in (0, 1]")
            if not 0 < self.ensemble.val_fraction < 1:
                raise ValueError("ensemble val_fraction must lie in (0, 1)")
            if not 0 < self.evaluation.train_ratio <= 1:
                raise ValueError("train_ratio must lie in (0, 1]")
            if self.evaluation.k < 2:
                raise ValueError("k must be at least 2")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"]["kinds"] = list(self.generator.kinds)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def paper_overrides() -> dict:
    """Full-scale hyperparameters pinned by the paper profile."""
    return {
        "features": {"vocab_size": 10000},
        "generator": {"n_features": 48},
        "tagger": {"embed_dim": 300, "hidden_units": 128, "num_layers": 2,
                   "learning_rate": 0.001, "batch_size": 32, "dropout_rate": 0.5,
                   "vocab_size": 10000},
        "gb": {"eta": 0.1, "max_depth": 5, "min_child_weight": 1.0,
               "subsample": 0.8, "colsample": 0.8},
        "lr": {"C": 0.1},
        "evaluation": {"train_ratio": 0.8, "k": 5},
    }


def _merge(obj, updates: dict, path=""):
    names = {f.name: f for f in fields(obj)}
    for key, value in updates.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{path + key} must be an object")
            _merge(current, value, path + key + ".")
        else:
            if key == "kinds":
                value = tuple(value)
            setattr(obj, key, value)


def build_config(profile: str = "desk", overrides: dict | None = None,
                 seed: int | None = None) -> PipelineConfig:
    """Profile defaults, then the paper pins (paper profile), then ``overrides``."""
    overrides = dict(overrides or {})
    profile = overrides.pop("profile", profile)
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {profile!r}")
    cfg = PipelineConfig(profile=profile)
    if profile == "paper":
        _merge(cfg, paper_overrides())
    _merge(cfg, overrides)
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()


def load_config(path, profile: str | None = None, seed: int | None = None) -> PipelineConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    if profile is not None:
        data["profile"] = profile
    return build_config(data.pop("profile", "desk"), data, seed)


def derive_seed(seed: int, stage: str) -> int:
    """Independent seed per named stage, stable under stage reordering."""
    digest = hashlib.sha256(f"{seed}/{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "big")

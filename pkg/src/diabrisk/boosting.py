"""Second-order gradient-boosted trees with exact greedy split finding.

Each round fits a tree to the gradient/hessian of the loss at the current
margins. Leaf weights are ``-G / (H + lambda)`` and a split scores

    gain = 0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma

Margins move by ``eta * tree(x)`` after every round.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

SCHEMA_VERSION = 1


@dataclass
class GbConfig:
    eta: float = 0.1
    max_depth: int = 5
    min_child_weight: float = 1.0
    subsample: float = 0.8
    colsample: float = 0.8
    reg_lambda: float = 1.0
    gamma: float = 0.0
    num_rounds: int = 100
    base_score: float = 0.0
    loss: str = "logistic"
    seed: int = 0

    def validate(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        for name in ("subsample", "colsample"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("lambda, gamma and min_child_weight must be non-negative")
        if self.max_depth < 0 or self.num_rounds < 0:
            raise ValueError("max_depth and num_rounds must be non-negative")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


LOSSES = ("logistic", "squared")


def grad_hess(loss: str, y, margin):
    y = np.asarray(y, dtype=float)
    margin = np.asarray(margin, dtype=float)
    if loss == "logistic":
        p = expit(margin)
        return p - y, p * (1.0 - p)
    if loss == "squared":
        return margin - y, np.ones_like(margin)
    raise ValueError(f"unknown loss {loss!r}")


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    if H + reg_lambda <= 0:
        raise ValueError(f"H + lambda must be positive, got {H + reg_lambda}")
    return -G / (H + reg_lambda)


def split_gain(GL, HL, GR, HR, reg_lambda, gamma):
    """Objective reduction of a split; works elementwise on arrays."""
    return 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda)
                  - (GL + GR) ** 2 / (HL + HR + reg_lambda)) - gamma


# ---------------------------------------------------------------------------
# Trees


@dataclass
class TreeNode:
    weight: float = 0.0                # leaf value (also kept on inner nodes for reference)
    feature: int = -1                  # -1 marks a leaf
    threshold: float = 0.0
    gain: float = 0.0
    cover: float = 0.0                 # hessian sum of the rows reaching the node
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def nodes(self):
        yield self
        if not self.is_leaf:
            yield from self.left.nodes()
            yield from self.right.nodes()

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Raw leaf values for rows of ``x`` (n, F); rows with x < threshold go left."""
        out = np.empty(x.shape[0])
        stack = [(self, np.arange(x.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = node.weight
                continue
            go_left = x[rows, node.feature] < node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.weight, "cover": self.cover}
        return {"feature": self.feature, "threshold": self.threshold, "gain": self.gain,
                "cover": self.cover, "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf" in d:
            return cls(weight=float(d["leaf"]), cover=float(d["cover"]))
        return cls(feature=int(d["feature"]), threshold=float(d["threshold"]),
                   gain=float(d["gain"]), cover=float(d["cover"]),
                   left=cls.from_dict(d["left"]), right=cls.from_dict(d["right"]))


def best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, columns: Sequence[int],
               cfg: GbConfig):
    """Exact greedy scan over every active column.

    Returns ``(gain, feature, threshold)`` of the best legal split or None.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    cols = np.asarray(sorted(columns), dtype=int)
    m = x.shape[0]
    if m < 2 or cols.size == 0:
        return None
    xs = x[:, cols]
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR, HR = G - GL, H - HL
    valid = (xs[:-1] < xs[1:]) & (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight)
    if not valid.any():
        return None
    gains = np.where(valid, split_gain(GL, HL, GR, HR, cfg.reg_lambda, cfg.gamma), -np.inf)
    # column-major flattening: feature first, then ascending threshold
    flat = int(np.argmax(gains.T))
    j, pos = divmod(flat, m - 1)
    thr = 0.5 * (xs[pos, j] + xs[pos + 1, j])
    if not thr > xs[pos, j]:
        thr = xs[pos + 1, j]
    return float(gains[pos, j]), int(cols[j]), float(thr)


def build_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, columns: Sequence[int],
               cfg: GbConfig, depth: int = 0) -> TreeNode:
    if x.shape[0] == 0:
        raise ValueError("cannot build a tree on zero rows")
    G, H = float(g.sum()), float(h.sum())
    node = TreeNode(weight=leaf_weight(G, H, cfg.reg_lambda), cover=H)
    if depth >= cfg.max_depth:
        return node
    found = best_split(x, g, h, columns, cfg)
    if found is None or found[0] <= 0:
        return node
    node.gain, node.feature, node.threshold = found
    left = x[:, node.feature] < node.threshold
    node.left = build_tree(x[left], g[left], h[left], columns, cfg, depth + 1)
    node.right = build_tree(x[~left], g[~left], h[~left], columns, cfg, depth + 1)
    return node


# ---------------------------------------------------------------------------
# Boosting


@dataclass
class GbModel:
    trees: list[TreeNode]
    config: GbConfig
    n_features: int
    feature_names: list[str] | None = None

    def margin(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.full(x.shape[0], self.config.base_score, dtype=float)
        for tree in self.trees:
            out += self.config.eta * tree.predict(x)
        return out

    def predict_proba(self, x) -> np.ndarray:
        if self.config.loss != "logistic":
            raise ValueError("probabilities are only defined for the logistic loss")
        return expit(self.margin(x))

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return x

    def feature_importance(self) -> dict[str, float]:
        """Total split gain per feature, features that never split omitted."""
        total = np.zeros(self.n_features)
        for tree in self.trees:
            for node in tree.nodes():
                if not node.is_leaf:
                    total[node.feature] += node.gain
        names = self.feature_names or [f"f{i}" for i in range(self.n_features)]
        return {names[i]: float(total[i]) for i in np.flatnonzero(total)}

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "gb_model",
                "config": self.config.to_dict(), "n_features": self.n_features,
                "feature_names": self.feature_names,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbModel":
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "gb_model":
            raise ValueError("not a supported gb_model file")
        return cls([TreeNode.from_dict(t) for t in d["trees"]], GbConfig.from_dict(d["config"]),
                   int(d["n_features"]), d.get("feature_names"))

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "GbModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _take(n: int, frac: float, rng) -> np.ndarray:
    k = max(1, int(np.floor(frac * n + 0.5)))
    if k >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def fit(x, y, config: GbConfig | None = None, feature_names=None, history: list | None = None):
    """Boost ``num_rounds`` trees.

    When ``history`` is a list, the training margins after every round are
    appended to it.
    """
    cfg = (config or GbConfig()).validate()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, F = x.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if cfg.loss == "logistic" and len(np.unique(y)) < 2:
        raise ValueError("logistic loss needs both classes present")
    rng = np.random.default_rng(cfg.seed)
    margin = np.full(n, cfg.base_score, dtype=float)
    trees = []
    for r in range(cfg.num_rounds):
        rows = _take(n, cfg.subsample, rng)
        cols = _take(F, cfg.colsample, rng)
        g, h = grad_hess(cfg.loss, y, margin)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise FloatingPointError(f"non-finite gradient at round {r}")
        tree = build_tree(x[rows], g[rows], h[rows], cols, cfg)
        trees.append(tree)
        margin = margin + cfg.eta * tree.predict(x)
        if history is not None:
            history.append(margin.copy())
    return GbModel(trees, cfg, F, list(feature_names) if feature_names is not None else None)


def log_loss(y, margin) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))

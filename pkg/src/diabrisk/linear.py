"""L2-regularised logistic regression and the probability-averaging ensemble."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .evalx import auc

SCHEMA_VERSION = 1


@dataclass
class LrModel:
    w: np.ndarray
    b: float
    C: float
    iterations: int = 0
    grad_norm: float = float("nan")
    converged: bool = False

    def predict_proba(self, x) -> np.ndarray:
        return lr_predict(self, x)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "lr_model", "w": self.w.tolist(),
                "b": self.b, "C": self.C,
                "diagnostics": {"iterations": self.iterations, "grad_norm": self.grad_norm,
                                "converged": self.converged}}

    @classmethod
    def from_dict(cls, d: dict) -> "LrModel":
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "lr_model":
            raise ValueError("not a supported lr_model file")
        diag = d.get("diagnostics", {})
        return cls(np.asarray(d["w"], dtype=float), float(d["b"]), float(d["C"]),
                   diag.get("iterations", 0), diag.get("grad_norm", float("nan")),
                   diag.get("converged", False))


def lr_predict(model: LrModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.w.shape[0]:
        raise ValueError(f"expected {model.w.shape[0]} features, got {x.shape[-1]}")
    return expit(x @ model.w + model.b)


def lr_loss_grad(w, b, x, y, C):
    """Mean negative log-likelihood plus ||w||^2 / (2C); intercept unpenalised.

    Returns ``(loss, grad_w, grad_b)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = x @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + w @ w / (2.0 * C)
    r = (expit(z) - y) / len(y)
    return float(loss), x.T @ r + w / C, float(r.sum())


def lr_fit(x, y, C: float = 0.1, tol: float = 1e-6, max_iter: int = 1000,
           seed: int = 0, memory: int = 10) -> LrModel:
    """Limited-memory BFGS with backtracking line search.

    Stops when the Euclidean norm of the full gradient (weights and intercept)
    drops to ``tol``. The seed only sets the starting point.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs both classes present")
    d = x.shape[1]
    theta = np.random.default_rng(seed).normal(0.0, 0.1, d + 1)

    def objective(th):
        loss, gw, gb = lr_loss_grad(th[:d], th[d], x, y, C)
        return loss, np.append(gw, gb)

    f, g = objective(theta)
    pairs = deque(maxlen=memory)
    it = 0
    while np.linalg.norm(g) > tol and it < max_iter:
        if not np.isfinite(f):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, yv, rho in reversed(pairs):
            a = rho * (s @ q)
            q -= a * yv
            alphas.append(a)
        if pairs:
            s, yv, _ = pairs[-1]
            q *= (s @ yv) / (yv @ yv)
        for (s, yv, rho), a in zip(pairs, reversed(alphas)):
            q += s * (a - rho * (yv @ q))
        direction = -q
        slope = g @ direction
        if slope >= 0:   # not a descent direction: restart from steepest descent
            pairs.clear()
            direction, slope = -g, -(g @ g)
        step = 1.0
        while True:
            f_new, g_new = objective(theta + step * direction)
            if f_new <= f + 1e-4 * step * slope or step < 1e-20:
                break
            step *= 0.5
        s = step * direction
        yv = g_new - g
        if s @ yv > 1e-300:
            pairs.append((s, yv, 1.0 / (s @ yv)))
        theta, f, g = theta + s, f_new, g_new
        it += 1
    norm = float(np.linalg.norm(g))
    return LrModel(theta[:d].copy(), float(theta[d]), C, it, norm, norm <= tol)


# ---------------------------------------------------------------------------
# Ensemble


@dataclass
class EnsembleModel:
    gb: object          # GbModel
    lr: LrModel
    w_gb: float = 0.5
    w_lr: float = 0.5
    scan: list = field(default_factory=list)   # (w_gb, validation AUC) pairs from tuning

    def check(self):
        if self.w_gb < 0 or self.w_lr < 0 or abs(self.w_gb + self.w_lr - 1.0) > 1e-12:
            raise ValueError(f"ensemble weights ({self.w_gb}, {self.w_lr}) are not normalised")

    def components(self, x) -> dict[str, np.ndarray]:
        return {"gb": self.gb.predict_proba(x), "lr": lr_predict(self.lr, x)}

    def predict_proba(self, x) -> np.ndarray:
        return ensemble_predict(self, x)

    def to_dict(self, gb_ref="gb.json", lr_ref="lr.json") -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "ensemble_model",
                "weights": {"gb": self.w_gb, "lr": self.w_lr},
                "components": {"gb": gb_ref, "lr": lr_ref},
                "scan": [{"w_gb": w, "auc": a} for w, a in self.scan]}


def combine(p_gb, p_lr, w_gb: float, w_lr: float) -> np.ndarray:
    return w_gb * np.asarray(p_gb, dtype=float) + w_lr * np.asarray(p_lr, dtype=float)


def ensemble_predict(ens: EnsembleModel, x) -> np.ndarray:
    ens.check()
    parts = ens.components(x)
    return combine(parts["gb"], parts["lr"], ens.w_gb, ens.w_lr)


def weight_grid(step: float) -> list[float]:
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} must divide 1")
    return [i / n for i in range(n + 1)]


def tune_weights(p_gb, p_lr, y, step: float = 0.05):
    """Scan w_gb over the grid, keep the best validation AUC; ties go to larger w_gb."""
    best_w, best_auc, scan = None, -np.inf, []
    for w in weight_grid(step):
        a = auc(combine(p_gb, p_lr, w, 1.0 - w), y)
        scan.append((w, a))
        if a >= best_auc:
            best_w, best_auc = w, a
    return best_w, scan


def tune_ensemble(gb, lr: LrModel, x_val, y_val, step: float = 0.05) -> EnsembleModel:
    w, scan = tune_weights(gb.predict_proba(x_val), lr_predict(lr, x_val), y_val, step)
    return EnsembleModel(gb, lr, w, 1.0 - w, scan)


def save_json(obj: dict, path) -> None:
    """Atomic write: a sibling temp file replaced into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    tmp.replace(path)

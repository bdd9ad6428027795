"""Logistic regression on engineered segment features, trained with full-batch Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.optim import Adam


@dataclass(frozen=True)
class LRConfig:
    l2: float = 1e-4
    lr: float = 0.05
    iterations: int = 1500
    class_weighting: bool = True
    seed: int = 0


@dataclass(frozen=True, eq=False)
class LRModel:
    w: np.ndarray          # feature weights followed by the bias
    layout_key: str

    @property
    def dim(self) -> int:
        return self.w.shape[0] - 1


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _augment(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def lr_predict(model: LRModel, x, layout_key: str | None = None) -> np.ndarray:
    """Pr(out-of-bed | x) for one vector or a row-stacked matrix."""
    if layout_key is not None and layout_key != model.layout_key:
        raise ValueError(f"model trained on layout {model.layout_key!r}, got {layout_key!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match model dimension {model.dim}")
    p = sigmoid(_augment(x) @ model.w)
    return p if x.ndim == 2 else p[0]


def class_weights(y: np.ndarray) -> np.ndarray:
    """Inverse-frequency per-sample weights normalised to mean 1."""
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=2).astype(np.float64)
    w_class = np.where(counts > 0, len(y) / (2.0 * np.maximum(counts, 1)), 0.0)
    return w_class[y]


def lr_loss_and_grad(w: np.ndarray, Xa: np.ndarray, y: np.ndarray, sample_w: np.ndarray,
                     l2: float) -> tuple[float, np.ndarray]:
    """Weighted mean log-loss plus 0.5*l2*||w_features||^2 (bias unpenalised) and its gradient."""
    z = Xa @ w
    # log(1 + e^z) - y z, computed stably
    nll = np.logaddexp(0.0, z) - y * z
    total = sample_w.sum()
    reg = w.copy()
    reg[-1] = 0.0
    loss = float((sample_w * nll).sum() / total + 0.5 * l2 * reg @ reg)
    grad = Xa.T @ (sample_w * (sigmoid(z) - y)) / total + l2 * reg
    return loss, grad


def lr_train(X: np.ndarray, y: np.ndarray, cfg: LRConfig = LRConfig(), layout_key: str = "") -> LRModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of examples")
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs examples of both classes")
    Xa = _augment(X)
    sw = class_weights(y.astype(np.int64)) if cfg.class_weighting else np.ones_like(y)
    w = np.zeros(Xa.shape[1])
    opt = Adam([w], lr=cfg.lr)
    for _ in range(cfg.iterations):
        _, g = lr_loss_and_grad(w, Xa, y, sw, cfg.l2)
        opt.step([g])
    return LRModel(w, layout_key)

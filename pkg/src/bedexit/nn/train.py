"""Minibatch Adam training with early stopping for the FCN and ConvLSTM models.

A training stream is a pair ``(channels (L, 4), labels (L,))`` for one patient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..lr import class_weights
from .models import ConvLSTMModel, FCNModel, convlstm_windows, fcn_windows
from .optim import Adam
from .tensor import Tensor

Stream = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    minibatch: int = 80
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 30
    patience: int = 10
    seed: int = 0
    class_weighting: bool = True
    fcn_stride: int = 2               # stride between training windows cut from a stream
    max_windows_per_epoch: int | None = None

    def __post_init__(self):
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.max_epochs < 1 or self.patience < 1 or self.fcn_stride < 1:
            raise ValueError("max_epochs, patience and fcn_stride must be >= 1")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: object
    curve: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, train loss, val loss)
    best_epoch: int = 0

    def write_curve(self, path) -> None:
        lines = ["epoch,train_loss,val_loss"] + [f"{e},{tr!r},{va!r}" for e, tr, va in self.curve]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _class_weight_table(streams: Sequence[Stream], enabled: bool) -> np.ndarray:
    if not enabled:
        return np.ones(2)
    y = np.concatenate([np.asarray(s[1], dtype=np.int64) for s in streams])
    counts = np.bincount(y, minlength=2)
    cw = class_weights(y)
    return np.array([cw[y == c][0] if counts[c] else 0.0 for c in range(2)])


def _weighted_ce(p1: np.ndarray, y: np.ndarray, cw: np.ndarray) -> float:
    p = np.clip(np.where(y == 1, p1, 1.0 - p1), 1e-12, 1.0)
    w = cw[y]
    return float((w * -np.log(p)).sum() / w.sum())


def _step(model, opt: Adam, loss: Tensor, where: str) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        norms = {k: float(np.linalg.norm(v.data)) for k, v in model.params.items()}
        raise TrainingDivergedError(f"non-finite loss {value} at {where}; parameter norms {norms}")
    for p in model.parameters():
        p.grad = None
    loss.backward()
    opt.step([p.grad if p.grad is not None else np.zeros_like(p.data) for p in model.parameters()])
    return value


# --- FCN ------------------------------------------------------------------


def _fcn_data(model: FCNModel, streams: Sequence[Stream], stride: int):
    xs, ys = [], []
    for ch, lab in streams:
        x, y = fcn_windows(ch, lab, model.cfg.window, stride)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def _fcn_epoch(model, X, Y, cw, opt, cfg, rng, epoch) -> float:
    order = rng.permutation(X.shape[0])
    if cfg.max_windows_per_epoch is not None:
        order = order[:cfg.max_windows_per_epoch]
    total, n = 0.0, 0
    for s in range(0, len(order), cfg.minibatch):
        idx = np.sort(order[s:s + cfg.minibatch])
        loss = model.loss(X[idx], Y[idx], cw, training=True, rng=rng)
        total += _step(model, opt, loss, f"epoch {epoch}, batch {s // cfg.minibatch}") * len(idx)
        n += len(idx)
    return total / max(n, 1)


def _fcn_val_loss(model: FCNModel, X: np.ndarray, Y: np.ndarray, cw) -> float:
    """Validation loss over non-overlapping windows (cheaper than stride-1 inference)."""
    p = np.concatenate([model.predict_proba(X[s:s + 2048])[:, :, 1] for s in range(0, X.shape[0], 2048)])
    return _weighted_ce(p.reshape(-1), Y.reshape(-1).astype(np.int64), cw)


# --- ConvLSTM -------------------------------------------------------------


def _chunks(model: ConvLSTMModel, streams: Sequence[Stream]):
    """Consecutive unroll-length chunks per stream: (stream index, start)."""
    u = model.cfg.unroll
    wins = [convlstm_windows(ch, model.cfg.window) for ch, _ in streams]
    labs = [np.asarray(lab, dtype=np.int64) for _, lab in streams]
    chunks = [(si, s) for si, w in enumerate(wins) for s in range(0, w.shape[0] - u + 1, u)]
    return wins, labs, chunks


def _convlstm_epoch(model, wins, labs, chunks, cw, opt, cfg, rng, epoch) -> float:
    """Truncated BPTT over lanes of consecutive chunks; state carries between chunks of the same stream."""
    u = model.cfg.unroll
    n = len(chunks)
    if cfg.max_windows_per_epoch is not None:
        n = min(n, max(1, cfg.max_windows_per_epoch // u))
    offset = int(rng.integers(len(chunks)))
    order = [chunks[(offset + i) % len(chunks)] for i in range(n)]
    lanes = min(cfg.minibatch, n)
    per = n // lanes
    h = c = None
    total = 0.0
    for s in range(per):
        batch = [order[j * per + s] for j in range(lanes)]
        x = np.stack([wins[si][st:st + u] for si, st in batch])
        y = np.stack([labs[si][st:st + u] for si, st in batch])
        if s == 0:
            h0 = c0 = None
        else:
            prev = [order[j * per + s - 1] for j in range(lanes)]
            keep = np.array([p[0] == b[0] and p[1] + u == b[1] for p, b in zip(prev, batch)], dtype=np.float64)
            h0 = Tensor(h * keep[:, None])
            c0 = Tensor(c * keep[:, None])
        loss, hT, cT = model.loss(x, y, cw, h0, c0, training=True, rng=rng)
        total += _step(model, opt, loss, f"epoch {epoch}, step {s}")
        h, c = hT.data.copy(), cT.data.copy()
    return total / max(per, 1)


def _convlstm_val_loss(model: ConvLSTMModel, streams: Sequence[Stream], cw) -> float:
    p = np.concatenate([model.predict_stream(ch) for ch, _ in streams])
    y = np.concatenate([np.asarray(lab, dtype=np.int64) for _, lab in streams])
    return _weighted_ce(p, y, cw)


def tbptt_gradients(model: ConvLSTMModel, windows: np.ndarray, labels: np.ndarray, unroll: int,
                    cw: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradients of the summed per-chunk losses of one sequence, truncating backprop every ``unroll`` steps."""
    grads = {k: np.zeros_like(v.data) for k, v in model.params.items()}
    h0 = c0 = None
    for s in range(0, windows.shape[0], unroll):
        for p in model.parameters():
            p.grad = None
        loss, h, c = model.loss(windows[None, s:s + unroll], labels[None, s:s + unroll], cw, h0, c0)
        loss.backward()
        for k, v in model.params.items():
            if v.grad is not None:
                grads[k] += v.grad
        h0, c0 = Tensor(h.data.copy()), Tensor(c.data.copy())
    return grads


# --- driver ---------------------------------------------------------------


def nn_train(model, train: Sequence[Stream], val: Sequence[Stream] = (), cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train in place and return the model restored to its best-validation-loss snapshot.

    Without validation streams the training loss drives early stopping.
    """
    if not isinstance(model, (FCNModel, ConvLSTMModel)):
        raise TypeError(f"unsupported model type {type(model).__name__}")
    if not train:
        raise ValueError("no training streams")
    rng = np.random.default_rng(cfg.seed)
    cw = _class_weight_table(train, cfg.class_weighting)
    opt = Adam([p.data for p in model.parameters()], cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    if isinstance(model, FCNModel):
        X, Y = _fcn_data(model, train, cfg.fcn_stride)
        if X.shape[0] == 0:
            raise ValueError("training streams are shorter than one window")
        run = lambda e: _fcn_epoch(model, X, Y, cw, opt, cfg, rng, e)
        if val:
            Xv, Yv = _fcn_data(model, val, model.cfg.window)
        val_loss = lambda: _fcn_val_loss(model, Xv, Yv, cw)
    else:
        wins, labs, chunks = _chunks(model, train)
        if not chunks:
            raise ValueError("training streams are shorter than one unroll")
        run = lambda e: _convlstm_epoch(model, wins, labs, chunks, cw, opt, cfg, rng, e)
        val_loss = lambda: _convlstm_val_loss(model, val, cw)

    result = TrainResult(model)
    best = np.inf
    best_state = model.state_dict()
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        tr = run(epoch)
        va = val_loss() if val else tr
        if not np.isfinite(va):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        result.curve.append((epoch, tr, va))
        if va < best:
            best, best_state, wait = va, model.state_dict(), 0
            result.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return result

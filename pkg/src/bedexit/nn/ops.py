"""Differentiable layer primitives used by the FCN and ConvLSTM models.

Layouts: sequences are (batch, channels, length); conv weights are
(out_channels, in_channels, kernel).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, _make, add, as_tensor, matmul, sigmoid, tanh


def conv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def _windows(x: np.ndarray, kernel: int, stride: int, l_out: int) -> np.ndarray:
    """(N, C, Lp) -> read-only view (N, l_out, C, kernel)."""
    n, c, _ = x.shape
    sn, sc, sl = x.strides
    return as_strided(x, shape=(n, l_out, c, kernel), strides=(sn, sl * stride, sc, sl), writeable=False)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {x.shape} and {w.shape}")
    n, c_in, length = x.shape
    c_out, wc_in, k = w.shape
    if wc_in != c_in:
        raise ValueError(f"conv1d channel mismatch: input has {c_in}, weight expects {wc_in}")
    l_out = conv_out_len(length, k, stride, padding)
    if l_out < 1:
        raise ValueError(f"conv1d input length {length} too short for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    cols = _windows(xp, k, stride, l_out).reshape(n * l_out, c_in * k)
    wmat = w.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(n, l_out, c_out).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, as_tensor(b))

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(n * l_out, c_out)
        gw = (g2.T @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, l_out, c_in, k)
            gxp = np.zeros_like(xp)
            span = stride * (l_out - 1) + 1
            for j in range(k):
                gxp[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, padding:padding + length] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _make(np.ascontiguousarray(out), parents, backward)


def maxpool1d(x: Tensor, size: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    """Max pooling; padded positions are -inf so they never win."""
    n, c, length = x.shape
    l_out = conv_out_len(length, size, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf) if padding else x.data
    span = stride * (l_out - 1) + 1
    out = xp[:, :, 0:span:stride].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for j in range(1, size):
        cand = xp[:, :, j:j + span:stride]
        better = cand > out  # strict: ties keep the first position
        arg = np.where(better, np.int8(j), arg)
        out = np.maximum(out, cand)

    def backward(g):
        gxp = np.zeros_like(xp)
        for j in range(size):
            gxp[:, :, j:j + span:stride] += g * (arg == j)
        return (gxp[:, :, padding:padding + length] if padding else gxp,)

    return _make(out, (x,), backward)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    d = x.data
    neg = alpha * np.expm1(np.minimum(d, 0.0))
    out = np.where(d > 0, d, neg)
    return _make(out, (x,), lambda g: (g * np.where(d > 0, 1.0, neg + alpha),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    d = x.data
    return _make(np.where(d > 0, d, slope * d), (x,), lambda g: (g * np.where(d > 0, 1.0, slope),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity unless ``training``."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Weighted mean cross-entropy of (M, C) logits against integer targets (M,)."""
    z = logits.data
    if z.ndim != 2:
        raise ValueError("softmax_cross_entropy expects (M, C) logits")
    targets = np.asarray(targets, dtype=np.int64)
    m = z.shape[0]
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    nll = logsum - shifted[np.arange(m), targets]
    loss = float((w * nll).sum() / total)

    def backward(g):
        p = softmax(z)
        p[np.arange(m), targets] -= 1.0
        return (g * p * (w / total)[:, None],)

    return _make(np.array(loss), (logits,), backward)


def lstm_cell(x_proj: Tensor, h: Tensor, c: Tensor, w_h: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step given the precomputed input projection ``x W_x + b`` (B, 4H).

    Gate order along the last axis: input, forget, candidate, output.
    """
    hidden = h.shape[1]
    gates = add(x_proj, matmul(h, w_h))
    i = sigmoid(gates[:, 0:hidden])
    f = sigmoid(gates[:, hidden:2 * hidden])
    g = tanh(gates[:, 2 * hidden:3 * hidden])
    o = sigmoid(gates[:, 3 * hidden:4 * hidden])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def lstm_forward(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor,
                 h0: Tensor | None = None, c0: Tensor | None = None) -> tuple[list[Tensor], Tensor, Tensor]:
    """Run an LSTM over (B, T, D) input; returns per-step hidden states and the final (h, c)."""
    bsz, steps, dim = x.shape
    hidden = w_h.shape[0]
    h = h0 if h0 is not None else Tensor(np.zeros((bsz, hidden)))
    c = c0 if c0 is not None else Tensor(np.zeros((bsz, hidden)))
    hs = []
    for t in range(steps):
        h, c = lstm_cell(add(matmul(x[:, t, :], w_x), b), h, c, w_h)
        hs.append(h)
    return hs, h, c

"""Central finite-difference gradient checks for the autodiff ops."""

import numpy as np

from bedexit.lr import lr_loss_and_grad
from bedexit.nn import ops
from bedexit.nn.tensor import Tensor, concat

H = 1e-6


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x: np.ndarray) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + H
        up = f()
        x[i] = old - H
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * H)
    return g


def check(build, arrays: list[np.ndarray], rng) -> float:
    """Max relative error over all inputs of ``build(*tensors) -> Tensor`` under a random projection."""
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    proj = rng.normal(size=out_shape)

    def scalar():
        return float((build(*[Tensor(a) for a in arrays]).data * proj).sum())

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*ts)
    out.backward(proj)
    return max(rel_error(t.grad, numeric_grad(scalar, a)) for t, a in zip(ts, arrays))


def _conv(rng):
    n, c, l = rng.integers(1, 4), rng.integers(1, 5), rng.integers(5, 12)
    o, k = rng.integers(1, 5), rng.integers(1, 4)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    arrays = [rng.normal(size=(n, c, l)), rng.normal(size=(o, c, k)), rng.normal(size=o)]
    return lambda x, w, b: ops.conv1d(x, w, b, stride=stride, padding=pad), arrays


def _maxpool(rng):
    n, c, l = rng.integers(1, 4), rng.integers(1, 4), rng.integers(3, 12)
    stride = int(rng.integers(1, 3))
    # distinct, well separated values keep the argmax stable under the finite-difference step
    x = rng.permutation(n * c * l).reshape(n, c, l) * 0.01 + rng.uniform(0, 1e-3)
    return lambda t: ops.maxpool1d(t, 3, stride, 1), [x.astype(np.float64)]


def _lstm(rng):
    b, hdim = rng.integers(1, 4), rng.integers(1, 6)
    arrays = [rng.normal(size=(b, 4 * hdim)), rng.normal(size=(b, hdim)), rng.normal(size=(b, hdim)),
              rng.normal(size=(hdim, 4 * hdim)) * 0.5]

    def build(xp, h, c, wh):
        h2, c2 = ops.lstm_cell(xp, h, c, wh)
        return concat([h2, c2], axis=1)
    return build, arrays


def _dense(rng):
    n, i, o = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 5)
    return ops.dense, [rng.normal(size=(n, i)), rng.normal(size=(i, o)), rng.normal(size=o)]


def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 1e-3, 0.1, x)


def _elu(rng):
    return ops.elu, [_away_from_zero(rng, tuple(rng.integers(1, 6, size=2)))]


def _leaky(rng):
    return lambda t: ops.leaky_relu(t, 0.01), [_away_from_zero(rng, tuple(rng.integers(1, 6, size=2)))]


def _xent(rng):
    m, c = rng.integers(1, 8), rng.integers(2, 5)
    targets = rng.integers(0, c, size=m)
    w = rng.uniform(0.1, 2.0, size=m)
    return lambda z: ops.softmax_cross_entropy(z, targets, w), [rng.normal(size=(m, c))]


OPS = {"conv1d": _conv, "maxpool1d": _maxpool, "lstm_cell": _lstm, "dense": _dense, "elu": _elu,
       "leaky_relu": _leaky, "softmax_cross_entropy": _xent}


def op_errors(name: str, n_shapes: int = 20, seed: int = 0) -> list[float]:
    rng = np.random.default_rng([seed, sorted(OPS).index(name)])
    errs = []
    for _ in range(n_shapes):
        build, arrays = OPS[name](rng)
        errs.append(check(build, arrays, rng))
    return errs


def lr_errors(n_shapes: int = 20, seed: int = 0) -> list[float]:
    rng = np.random.default_rng([seed, 99])
    errs = []
    for _ in range(n_shapes):
        n, d = rng.integers(2, 30), rng.integers(1, 8)
        Xa = np.hstack([rng.normal(size=(n, d)), np.ones((n, 1))])
        y = rng.integers(0, 2, size=n).astype(np.float64)
        sw = rng.uniform(0.2, 3.0, size=n)
        l2 = float(rng.uniform(0, 0.1))
        w = rng.normal(size=d + 1)
        _, g = lr_loss_and_grad(w, Xa, y, sw, l2)
        num = numeric_grad(lambda: lr_loss_and_grad(w, Xa, y, sw, l2)[0], w)
        errs.append(rel_error(g, num))
    return errs

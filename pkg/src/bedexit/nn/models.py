"""FCN dense labeller and ConvLSTM classifier over raw reading channels.

Both models consume per-reading channels ``[tag id, antenna id, rssi, phase]``
produced by :func:`channel_standardize`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..data import ReadingTable
from ..segfeat import Mode
from . import ops
from .tensor import Tensor, reshape, stack, transpose

N_CHANNELS = 4
N_CLASSES = 2


# --- input channels -------------------------------------------------------


@dataclass(frozen=True)
class ChannelStats:
    mode: str
    antennas: tuple[int, ...]
    rssi_mean: float
    rssi_std: float
    phase_mean: float
    phase_std: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["antennas"] = list(self.antennas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(d["mode"], tuple(d["antennas"]), d["rssi_mean"], d["rssi_std"], d["phase_mean"], d["phase_std"])


def fit_channel_stats(tables: list[ReadingTable], mode: Mode | str, antennas) -> ChannelStats:
    rssi = np.concatenate([t.rssi for t in tables]) if tables else np.zeros(0)
    phase = np.concatenate([t.phase for t in tables]) if tables else np.zeros(0)
    if rssi.size == 0:
        raise ValueError("cannot fit channel statistics on an empty training fold")
    return ChannelStats(Mode(mode).value, tuple(sorted(antennas)), float(rssi.mean()), float(rssi.std()),
                        float(phase.mean()), float(phase.std()))


def _scale(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    return (x - mean) / std if std > 0 else x.astype(np.float64)


def apply_channels(table: ReadingTable, stats: ChannelStats) -> np.ndarray:
    """(L, 4) channel matrix. Tag id maps to -1/+1 (0 in Tag mode), antenna id to a centred index."""
    n = len(table)
    out = np.empty((n, N_CHANNELS))
    if stats.mode == Mode.IDSENSOR.value:
        out[:, 0] = np.where(table.tag_id == 2, 1.0, -1.0)
    else:
        out[:, 0] = 0.0
    ants = np.asarray(stats.antennas)
    pos = np.searchsorted(ants, table.antenna_id)
    if n and (np.any(pos >= len(ants)) or np.any(ants[np.minimum(pos, len(ants) - 1)] != table.antenna_id)):
        raise ValueError("reading from an antenna unknown to the channel statistics")
    out[:, 1] = pos - (len(ants) - 1) / 2.0
    out[:, 2] = _scale(table.rssi, stats.rssi_mean, stats.rssi_std)
    out[:, 3] = _scale(table.phase, stats.phase_mean, stats.phase_std)
    return out


def channel_standardize(train: list[ReadingTable], mode: Mode | str, antennas,
                        others: list[ReadingTable] = ()) -> tuple[list[np.ndarray], list[np.ndarray], ChannelStats]:
    """Fit channel statistics on ``train`` only and apply them to ``train`` and ``others``."""
    stats = fit_channel_stats(train, mode, antennas)
    return [apply_channels(t, stats) for t in train], [apply_channels(t, stats) for t in others], stats


# --- parameter helpers ----------------------------------------------------


def _uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


class _Model:
    kind = ""
    params: dict[str, Tensor]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            if state[k].shape != v.data.shape:
                raise ValueError(f"parameter {k}: shape {state[k].shape} != {v.data.shape}")
            v.data = np.array(state[k], dtype=np.float64)


# --- FCN ------------------------------------------------------------------


@dataclass(frozen=True)
class FCNConfig:
    window: int = 10
    filters: tuple[int, ...] = (32, 32, 32, 32, 32)
    kernel: int = 3
    pool: int = 3
    leaky_slope: float = 0.01
    dropout: float = 0.5


class FCNModel(_Model):
    """Five same-padded conv(3) + LeakyReLU + maxpool(3, stride 1) blocks, dropout, 1x1 conv to 2 classes."""

    kind = "fcn"

    def __init__(self, cfg: FCNConfig = FCNConfig(), seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params = {}
        c_in = N_CHANNELS
        for i, c_out in enumerate(cfg.filters):
            self.params[f"conv{i}.w"] = _uniform(rng, (c_out, c_in, cfg.kernel), c_in * cfg.kernel)
            self.params[f"conv{i}.b"] = _zeros((c_out,))
            c_in = c_out
        self.params["out.w"] = _uniform(rng, (N_CLASSES, c_in, 1), c_in)
        self.params["out.b"] = _zeros((N_CLASSES,))

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """(N, 4, W) -> logits (N, 2, W)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1] != N_CHANNELS or x.shape[2] != self.cfg.window:
            raise ValueError(f"FCN expects input (N, {N_CHANNELS}, {self.cfg.window}), got {x.shape}")
        pad = self.cfg.kernel // 2
        h = x
        for i in range(len(self.cfg.filters)):
            h = ops.conv1d(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], stride=1, padding=pad)
            h = ops.leaky_relu(h, self.cfg.leaky_slope)
            h = ops.maxpool1d(h, self.cfg.pool, stride=1, padding=self.cfg.pool // 2)
        h = ops.dropout(h, self.cfg.dropout, rng, training)
        return ops.conv1d(h, self.params["out.w"], self.params["out.b"])

    def loss(self, x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
             training: bool = False, rng=None) -> Tensor:
        """Cross-entropy over every position of every window; y is (N, W)."""
        logits = self.forward(x, training, rng)
        n, _, w = logits.shape
        flat = reshape(transpose(logits, (0, 2, 1)), (n * w, N_CLASSES))
        yf = np.asarray(y).reshape(-1)
        sw = None if weights is None else np.asarray(weights)[yf]
        return ops.softmax_cross_entropy(flat, yf, sw)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """(N, 4, W) -> class probabilities (N, W, 2)."""
        return ops.softmax(self.forward(x).data.transpose(0, 2, 1))

    def predict_stream(self, channels: np.ndarray, batch: int = 2048) -> np.ndarray:
        """P(out-of-bed) per reading, averaging every stride-1 window covering it."""
        w = self.cfg.window
        n = channels.shape[0]
        if n == 0:
            return np.zeros(0)
        padded = channels if n >= w else np.vstack([channels, np.repeat(channels[-1:], w - n, axis=0)])
        wins = sliding_window_view(padded, w, axis=0)  # (L-w+1, 4, w)
        acc = np.zeros(padded.shape[0])
        cnt = np.zeros(padded.shape[0])
        for s in range(0, wins.shape[0], batch):
            p = self.predict_proba(np.ascontiguousarray(wins[s:s + batch]))[:, :, 1]
            for j in range(w):
                acc[s + j:s + j + p.shape[0]] += p[:, j]
                cnt[s + j:s + j + p.shape[0]] += 1
        return (acc / cnt)[:n]


def fcn_windows(channels: np.ndarray, labels: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut a stream into (N, 4, window) inputs and (N, window) dense labels."""
    n = channels.shape[0]
    if n < window:
        return np.zeros((0, N_CHANNELS, window)), np.zeros((0, window), dtype=np.int64)
    starts = np.arange(0, n - window + 1, stride)
    wins = sliding_window_view(channels, window, axis=0)[starts]
    labs = sliding_window_view(np.asarray(labels), window)[starts]
    return np.ascontiguousarray(wins), np.ascontiguousarray(labs)


# --- ConvLSTM -------------------------------------------------------------


@dataclass(frozen=True)
class ConvLSTMConfig:
    window: int = 20
    filters: int = 40
    conv_layers: int = 3
    kernel: int = 3
    stride: int = 2
    hidden: int = 160
    dropout: float = 0.5
    unroll: int = 40


def valid_conv_lengths(length: int, cfg: ConvLSTMConfig) -> list[int]:
    out = [length]
    for _ in range(cfg.conv_layers):
        out.append(ops.conv_out_len(out[-1], cfg.kernel, cfg.stride, 0))
    return out


class ConvLSTMModel(_Model):
    """Three valid conv(3, stride 2, 40 filters) + ELU layers per window, an LSTM across windows,
    dropout and a dense output layer."""

    kind = "convlstm"

    def __init__(self, cfg: ConvLSTMConfig = ConvLSTMConfig(), seed=0):
        self.cfg = cfg
        lengths = valid_conv_lengths(cfg.window, cfg)
        if lengths[-1] != 1:
            raise ValueError(f"conv stack maps window {cfg.window} to length {lengths[-1]}, expected 1")
        rng = np.random.default_rng(seed)
        self.params = {}
        c_in = N_CHANNELS
        for i in range(cfg.conv_layers):
            self.params[f"conv{i}.w"] = _uniform(rng, (cfg.filters, c_in, cfg.kernel), c_in * cfg.kernel)
            self.params[f"conv{i}.b"] = _zeros((cfg.filters,))
            c_in = cfg.filters
        h = cfg.hidden
        self.params["lstm.wx"] = _uniform(rng, (cfg.filters, 4 * h), cfg.filters + h)
        self.params["lstm.wh"] = _uniform(rng, (h, 4 * h), cfg.filters + h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget-gate bias
        self.params["lstm.b"] = Tensor(b, requires_grad=True)
        self.params["out.w"] = _uniform(rng, (h, N_CLASSES), h)
        self.params["out.b"] = _zeros((N_CLASSES,))

    def conv_features(self, x) -> Tensor:
        """(M, 4, window) -> (M, filters, 1)."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.ndim != 3 or h.shape[1] != N_CHANNELS or h.shape[2] != self.cfg.window:
            raise ValueError(f"ConvLSTM expects windows (M, {N_CHANNELS}, {self.cfg.window}), got {h.shape}")
        for i in range(self.cfg.conv_layers):
            h = ops.conv1d(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], stride=self.cfg.stride)
            h = ops.elu(h)
        return h

    def forward(self, x, h0: Tensor | None = None, c0: Tensor | None = None,
                training: bool = False, rng=None) -> tuple[Tensor, Tensor, Tensor]:
        """(B, T, 4, window) -> logits (B, T, 2) and the final LSTM state."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        bsz, steps = x.shape[:2]
        feats = self.conv_features(x.reshape(bsz * steps, N_CHANNELS, self.cfg.window))
        seq = reshape(feats, (bsz, steps, self.cfg.filters))
        hs, h, c = ops.lstm_forward(seq, self.params["lstm.wx"], self.params["lstm.wh"], self.params["lstm.b"], h0, c0)
        out = stack(hs, axis=1)
        out = ops.dropout(out, self.cfg.dropout, rng, training)
        logits = ops.dense(reshape(out, (bsz * steps, self.cfg.hidden)), self.params["out.w"], self.params["out.b"])
        return reshape(logits, (bsz, steps, N_CLASSES)), h, c

    def loss(self, x, y, weights=None, h0=None, c0=None, training=False, rng=None):
        logits, h, c = self.forward(x, h0, c0, training, rng)
        bsz, steps, _ = logits.shape
        yf = np.asarray(y).reshape(-1)
        sw = None if weights is None else np.asarray(weights)[yf]
        return ops.softmax_cross_entropy(reshape(logits, (bsz * steps, N_CLASSES)), yf, sw), h, c

    def stream(self, patient_id) -> "ConvLSTMStream":
        return ConvLSTMStream(self, patient_id)

    def predict_stream(self, channels: np.ndarray, patient_id=None) -> np.ndarray:
        """P(out-of-bed) per reading with LSTM state carried through the whole stream."""
        return self.stream(patient_id).run(convlstm_windows(channels, self.cfg.window))


class ConvLSTMStream:
    """Streaming inference with LSTM state owned by one patient."""

    def __init__(self, model: ConvLSTMModel, patient_id):
        self.model = model
        self.patient_id = patient_id
        self.reset()

    def reset(self) -> None:
        hdim = self.model.cfg.hidden
        self.h = np.zeros((1, hdim))
        self.c = np.zeros((1, hdim))

    def check(self, patient_id) -> None:
        if patient_id != self.patient_id:
            raise RuntimeError(
                f"LSTM state belongs to patient {self.patient_id!r}; reset before feeding patient {patient_id!r}"
            )

    def run(self, windows: np.ndarray, patient_id=None) -> np.ndarray:
        if patient_id is not None:
            self.check(patient_id)
        if windows.shape[0] == 0:
            return np.zeros(0)
        m = self.model
        p = m.params
        feats = m.conv_features(windows).data[:, :, 0]
        proj = feats @ p["lstm.wx"].data + p["lstm.b"].data
        wh = p["lstm.wh"].data
        hdim = m.cfg.hidden
        hs = np.empty((windows.shape[0], hdim))
        h, c = self.h, self.c
        for t in range(windows.shape[0]):
            g = proj[t:t + 1] + h @ wh
            i = _sig(g[:, :hdim])
            f = _sig(g[:, hdim:2 * hdim])
            cand = np.tanh(g[:, 2 * hdim:3 * hdim])
            o = _sig(g[:, 3 * hdim:])
            c = f * c + i * cand
            h = o * np.tanh(c)
            hs[t] = h[0]
        self.h, self.c = h, c
        logits = hs @ p["out.w"].data + p["out.b"].data
        return ops.softmax(logits)[:, 1]


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def convlstm_windows(channels: np.ndarray, window: int) -> np.ndarray:
    """One (4, window) input per reading ending at that reading; the stream start is edge-padded."""
    n = channels.shape[0]
    if n == 0:
        return np.zeros((0, N_CHANNELS, window))
    padded = np.vstack([np.repeat(channels[:1], window - 1, axis=0), channels])
    return np.ascontiguousarray(sliding_window_view(padded, window, axis=0))

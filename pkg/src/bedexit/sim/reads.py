"""Stochastic tag-read process over a pose trajectory."""

from __future__ import annotations

import numpy as np

from ..data import ReadingTable
from .pose import PoseSeries
from .rf import channel_at, orientation_loss_db, synth_phase, synth_rssi
from .scenario import RfChannelParams


def poisson_times(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Event times of a homogeneous Poisson process on [0, duration)."""
    if rate <= 0 or duration <= 0:
        return np.zeros(0)
    n = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0.0, duration, size=n))


def read_process(pose: PoseSeries, tag_ids: np.ndarray, antennas: dict[int, tuple[float, float, float]],
                 params: RfChannelParams, rate: float, seed=None,
                 antenna_offsets_db: dict[int, float] | None = None,
                 phase_offsets: np.ndarray | None = None) -> ReadingTable:
    """Thin a Poisson stream of inventory attempts into tag readings.

    Each attempt draws shadowed RSSI on every antenna; antennas under the
    sensitivity floor cannot read, and the reporting antenna is picked with
    probability proportional to linear received power. Attempts no antenna can
    hear are dropped. ``tag_ids`` is the ID reported at each pose sample.
    """
    rng = np.random.default_rng(seed)
    ant_ids = sorted(antennas)
    if rate < 0:
        raise ValueError("rate must be non-negative")
    t = poisson_times(rate, pose.duration, rng)
    if t.size == 0:
        return ReadingTable.empty()
    idx = np.minimum((t / pose.dt).astype(np.int64), len(pose) - 1)
    freqs = np.asarray(params.channel_freqs_mhz())
    ch = channel_at(t, params)
    f = freqs[ch]
    pos = pose.pos[idx]
    normal = pose.normal()[idx]
    if phase_offsets is None:
        phase_offsets = np.zeros((len(ant_ids), params.n_channels))
    offsets = antenna_offsets_db or {}

    rssi = np.empty((t.size, len(ant_ids)))
    phase = np.empty((t.size, len(ant_ids)))
    for j, a in enumerate(ant_ids):
        to_ant = np.asarray(antennas[a]) - pos
        dist = np.linalg.norm(to_ant, axis=1)
        orient = orientation_loss_db(normal, to_ant, params)
        rssi[:, j] = synth_rssi(dist, f, params, orient, rng, offsets.get(a, 0.0))
        phase[:, j] = synth_phase(dist, f, params, phase_offsets[j, ch])

    heard = ~np.isnan(rssi)
    power = np.where(heard, 10.0 ** (np.nan_to_num(rssi, nan=-1e3) / 10.0), 0.0)
    total = power.sum(axis=1)
    keep = total > 0
    cdf = np.cumsum(power[keep], axis=1) / total[keep, None]
    u = rng.random(int(keep.sum()))
    pick = np.minimum((u[:, None] > cdf).sum(axis=1), len(ant_ids) - 1)
    rows = np.flatnonzero(keep)
    table = ReadingTable(
        t[rows],
        np.asarray(ant_ids)[pick],
        rssi[rows, pick],
        phase[rows, pick],
        f[rows],
        np.asarray(tag_ids)[idx[rows]],
    )
    return table.sorted()

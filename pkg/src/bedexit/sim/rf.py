"""Backscatter RSSI and phase synthesis.

Received power follows the two-way Friis form P_t G_t^2 G_path^2 K with the
one-way path gain G_path = (lambda / 4 pi R)^2 |H| and |H| = exp(-alpha R),
so RSSI falls as 1/R^4 in free space.
"""

from __future__ import annotations

import math

import numpy as np

from .scenario import SPEED_OF_LIGHT, RfChannelParams

LN10 = math.log(10.0)


def wavelength(freq_mhz) -> np.ndarray:
    return SPEED_OF_LIGHT / (np.asarray(freq_mhz, dtype=np.float64) * 1e6)


def orientation_loss_db(normal: np.ndarray, to_antenna: np.ndarray, params: RfChannelParams) -> np.ndarray:
    """10 log10(max(eps, |cos psi|)), psi between tag broadside and the line of sight.

    Antennas behind the tag (cos psi < 0) additionally lose ``body_loss_db``.
    """
    u = to_antenna / np.linalg.norm(to_antenna, axis=-1, keepdims=True)
    cos = np.sum(normal * u, axis=-1)
    loss = 10.0 * np.log10(np.maximum(params.orientation_floor, np.abs(cos)))
    return np.where(cos < 0, loss - params.body_loss_db, loss)


def rssi_model_db(distance, freq_mhz, params: RfChannelParams, orientation_db=0.0) -> np.ndarray:
    """Noise-free, unquantised RSSI in dBm."""
    r = np.asarray(distance, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    lam = wavelength(freq_mhz)
    path = 2.0 * 20.0 * np.log10(lam / (4.0 * math.pi * r))
    absorption = 2.0 * (-params.absorption * r * 10.0 / LN10)
    return params.constant_db + path + absorption + orientation_db


def quantize(x, step):
    return np.round(np.asarray(x) / step) * step


def synth_rssi(distance, freq_mhz, params: RfChannelParams, orientation_db=0.0,
               rng: np.random.Generator | None = None, offset_db=0.0) -> np.ndarray:
    """RSSI with log-normal shadowing, quantised to the reader resolution.

    Values below the sensitivity floor are returned as NaN (no read).
    """
    clean = rssi_model_db(distance, freq_mhz, params, orientation_db) + offset_db
    if params.shadowing_sigma_db > 0:
        if rng is None:
            raise ValueError("shadowing needs a random generator")
        clean = clean + rng.normal(0.0, params.shadowing_sigma_db, size=np.shape(clean))
    q = np.minimum(quantize(clean, params.rssi_quantum_db), 0.0)
    return np.where(clean >= params.sensitivity_dbm, q, np.nan)


def phase_model(distance, freq_mhz, offset=0.0) -> np.ndarray:
    """Unwrapped round-trip phase 4 pi R f / c + offset (radians)."""
    return 4.0 * math.pi * np.asarray(distance) * np.asarray(freq_mhz) * 1e6 / SPEED_OF_LIGHT + offset


def synth_phase(distance, freq_mhz, params: RfChannelParams, offset=0.0) -> np.ndarray:
    """Reported phase in [0, 2 pi), quantised to the reader resolution."""
    wrapped = np.mod(phase_model(distance, freq_mhz, offset), 2.0 * math.pi)
    q = np.mod(quantize(wrapped, params.phase_quantum_rad), 2.0 * math.pi)
    return np.where(q >= 2.0 * math.pi, 0.0, q)


def channel_at(t, params: RfChannelParams) -> np.ndarray:
    """Round-robin hop: channel index for each time."""
    return (np.floor(np.asarray(t) / params.dwell_s).astype(np.int64)) % params.n_channels

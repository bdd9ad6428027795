"""Tilt-switch model of the two-IC ID-Sensor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import SensorModel

UPRIGHT_ID = 1
RECLINED_ID = 2


@dataclass(frozen=True, eq=False)
class SwitchTrace:
    ids: np.ndarray          # reported tag id per sample
    flip_times: np.ndarray   # comparator changeovers (excluding stuck chatter)
    stuck: np.ndarray        # bool per sample


def tilt_switch(pitch: np.ndarray, dt: float, model: SensorModel, seed=None,
                initial_id: int | None = None) -> SwitchTrace:
    """Hysteretic comparator on torso pitch (radians from vertical).

    The connected IC changes to ID2 once pitch exceeds threshold + h and back
    to ID1 once it drops below threshold - h. Each changeover sticks with
    probability ``p_stuck``: the contact then chatters, toggling the reported
    ID as a Poisson process at ``chatter_rate_hz`` until the next changeover.
    """
    rng = np.random.default_rng(seed)
    pitch = np.asarray(pitch, dtype=np.float64)
    n = pitch.size
    hi = math.radians(model.threshold_deg + model.hysteresis_deg)
    lo = math.radians(model.threshold_deg - model.hysteresis_deg)
    ids = np.empty(n, dtype=np.int64)
    stuck_mask = np.zeros(n, dtype=bool)
    flips = []
    if n == 0:
        return SwitchTrace(ids, np.zeros(0), stuck_mask)
    if initial_id is None:
        state = RECLINED_ID if pitch[0] > math.radians(model.threshold_deg) else UPRIGHT_ID
    else:
        state = initial_id
    stuck = False
    reported = state
    p_toggle = 1.0 - math.exp(-model.chatter_rate_hz * dt)
    u_stick = rng.random(n)
    u_chat = rng.random(n)
    for i in range(n):
        if state == UPRIGHT_ID and pitch[i] > hi:
            state = RECLINED_ID
        elif state == RECLINED_ID and pitch[i] < lo:
            state = UPRIGHT_ID
        else:
            if stuck and u_chat[i] < p_toggle:
                reported = 3 - reported
            ids[i] = reported
            stuck_mask[i] = stuck
            continue
        flips.append(i * dt)
        stuck = u_stick[i] < model.p_stuck
        reported = state
        ids[i] = reported
        stuck_mask[i] = stuck
    return SwitchTrace(ids, np.array(flips), stuck_mask)


def switch_angles(model: SensorModel) -> tuple[float, float]:
    """Pitch (radians) at which the comparator switches to ID2 and back to ID1."""
    return (math.radians(model.threshold_deg + model.hysteresis_deg),
            math.radians(model.threshold_deg - model.hysteresis_deg))

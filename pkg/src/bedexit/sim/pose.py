"""Scripted activities to a sampled torso pose trajectory with ground-truth labels."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import Label, LabelInterval
from .scenario import RoomGeometry

V_MAX = 2.0  # m/s, bound on sensor speed anywhere in a trajectory


class Activity(str, enum.Enum):
    LYING_ON_BED = "lying_on_bed"
    SITTING_ON_BED = "sitting_on_bed"
    STANDING = "standing"
    WALKING = "walking"
    SITTING_ON_CHAIR = "sitting_on_chair"


@dataclass(frozen=True)
class Target:
    """Resting sensor pose of a static activity (angles in radians)."""

    x: float
    y: float
    z: float
    pitch: float      # torso angle from vertical
    heading: float    # facing direction in the xy plane
    roll: float = 0.0  # rotation of the tag broadside about the spine


@dataclass(frozen=True)
class ActivityStep:
    activity: Activity
    duration: float
    target: Target | None = None                  # static activities
    waypoints: tuple[tuple[float, float], ...] = ()  # walking
    posture: str = ""

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("activity durations must be positive")
        if self.activity is Activity.WALKING:
            if not self.waypoints:
                raise ValueError("walking needs at least one waypoint")
        elif self.target is None:
            raise ValueError(f"{self.activity.value} needs a target pose")

    def to_dict(self) -> dict:
        d = {"activity": self.activity.value, "duration": self.duration}
        if self.target is not None:
            d["target"] = [self.target.x, self.target.y, self.target.z,
                           self.target.pitch, self.target.heading, self.target.roll]
        if self.waypoints:
            d["waypoints"] = [list(w) for w in self.waypoints]
        if self.posture:
            d["posture"] = self.posture
        return d


@dataclass(frozen=True)
class ActivityScript:
    patient_id: int
    steps: tuple[ActivityStep, ...]
    room: RoomGeometry = field(default_factory=RoomGeometry)
    shoulder_height: float = 1.38
    walking_speed: float = 0.6
    transition_s: float = 2.0
    walking_pitch: float = math.radians(8.0)

    def __post_init__(self):
        for s in self.steps:
            for wx, wy in s.waypoints:
                if not self.room.in_room(wx, wy):
                    raise ValueError(f"waypoint {(wx, wy)} lies outside the room")

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.steps))

    def start_times(self) -> list[float]:
        return [float(x) for x in np.concatenate([[0.0], np.cumsum([s.duration for s in self.steps])[:-1]])]

    def scripted_exit_times(self) -> list[float]:
        """Analytic instants at which a sit-to-stand transition carries the sensor off the bed."""
        out = []
        y_edge = self.room.bed[3]
        prev_y = None
        for start, step in zip(self.start_times(), self.steps):
            if step.activity is Activity.STANDING and prev_y is not None:
                y1 = step.target.y
                if prev_y <= y_edge < y1:
                    frac = (y_edge - prev_y) / (y1 - prev_y)
                    u = _inverse_smoothstep(frac)
                    out.append(start + u * min(self.transition_s, step.duration))
            prev_y = _end_y(step, prev_y)
        return out

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "shoulder_height": self.shoulder_height,
            "walking_speed": self.walking_speed,
            "transition_s": self.transition_s,
            "steps": [s.to_dict() for s in self.steps],
        }


def _end_y(step: ActivityStep, prev_y):
    if step.activity is Activity.WALKING:
        return step.waypoints[-1][1]
    return step.target.y


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _inverse_smoothstep(c: float) -> float:
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid * mid * (3 - 2 * mid) < c:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _angle_lerp(a: float, b: float, s):
    d = (b - a + math.pi) % (2 * math.pi) - math.pi
    return a + d * s


@dataclass(frozen=True, eq=False)
class PoseSeries:
    t: np.ndarray
    pos: np.ndarray       # (N, 3)
    pitch: np.ndarray
    heading: np.ndarray
    roll: np.ndarray
    in_bed: np.ndarray    # bool
    activity: np.ndarray  # index into the script steps
    dt: float

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def duration(self) -> float:
        return float(len(self) * self.dt)

    def normal(self) -> np.ndarray:
        """Unit broadside vector of the tag, (N, 3)."""
        h = np.stack([np.cos(self.heading), np.sin(self.heading), np.zeros_like(self.heading)], axis=1)
        z = np.array([0.0, 0.0, 1.0])
        st, ct = np.sin(self.pitch)[:, None], np.cos(self.pitch)[:, None]
        forward = ct * h + st * z
        spine = -st * h + ct * z
        side = np.cross(spine, forward)
        return np.cos(self.roll)[:, None] * forward + np.sin(self.roll)[:, None] * side

    def distance(self, antenna_pos) -> np.ndarray:
        return np.linalg.norm(self.pos - np.asarray(antenna_pos, dtype=np.float64), axis=1)

    def radial_velocity(self, antenna_pos) -> np.ndarray:
        """d(distance)/dt in m/s (positive when moving away)."""
        d = self.distance(antenna_pos)
        if d.size < 2:
            return np.zeros_like(d)
        return np.gradient(d, self.dt)

    def state(self, i: int, antennas: dict[int, tuple[float, float, float]]) -> "PoseState":
        return PoseState(
            position=tuple(self.pos[i]),
            pitch=float(self.pitch[i]),
            distance={k: float(self.distance(p)[i]) for k, p in antennas.items()},
            radial_velocity={k: float(self.radial_velocity(p)[i]) for k, p in antennas.items()},
        )

    def label_intervals(self) -> tuple[LabelInterval, ...]:
        """Runs of constant in-bed state tiling [0, duration]."""
        lab = np.where(self.in_bed, int(Label.IN_BED), int(Label.OUT_OF_BED))
        change = np.flatnonzero(np.diff(lab)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [len(lab)]])
        return tuple(
            LabelInterval(float(self.t[s]), float(self.t[e]) if e < len(lab) else self.duration, Label(int(lab[s])))
            for s, e in zip(starts, ends)
        )


@dataclass(frozen=True)
class PoseState:
    position: tuple[float, float, float]
    pitch: float
    distance: dict[int, float]
    radial_velocity: dict[int, float]


def _ou(rng: np.random.Generator, n: int, dt: float, sigma: float, tau: float) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck path sampled every dt."""
    a = math.exp(-dt / tau)
    noise = rng.standard_normal(n) * sigma * math.sqrt(1 - a * a)
    out = np.empty(n)
    x = rng.standard_normal() * sigma
    for i in range(n):
        x = a * x + noise[i]
        out[i] = x
    return out


def pose_trajectory(script: ActivityScript, dt: float = 0.05, seed=None,
                    micro_motion: bool = True) -> PoseSeries:
    """Sample the sensor pose every ``dt`` seconds over the script.

    Each static activity eases from the previous pose into its target over the
    patient's transition time (smoothstep). Walking follows its waypoints at
    the patient's walking speed. Small Ornstein-Uhlenbeck fidgeting is added to
    pitch, x and z (never y, so bed-edge crossings stay analytic).
    """
    rng = np.random.default_rng(seed)
    total = script.total_duration
    n = int(round(total / dt))
    t = np.arange(n) * dt
    pos = np.zeros((n, 3))
    pitch = np.zeros(n)
    heading = np.zeros(n)
    roll = np.zeros(n)
    act = np.zeros(n, dtype=np.int64)

    first = script.steps[0]
    if first.target is None:
        raise ValueError("a script must start with a static activity")
    prev = first.target
    for k, (start, step) in enumerate(zip(script.start_times(), script.steps)):
        idx = np.flatnonzero((t >= start - 1e-12) & (t < start + step.duration - 1e-12))
        act[idx] = k
        tl = t[idx] - start
        t_tr = min(script.transition_s, step.duration)
        s = smoothstep(tl / t_tr)
        if step.activity is Activity.WALKING:
            path = np.array([(prev.x, prev.y)] + list(step.waypoints))
            seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
            cum = np.concatenate([[0.0], np.cumsum(seg_len)])
            travelled = np.minimum(script.walking_speed * tl, cum[-1])
            seg = np.clip(np.searchsorted(cum, travelled, side="right") - 1, 0, len(seg_len) - 1)
            frac = np.where(seg_len[seg] > 0, (travelled - cum[seg]) / np.where(seg_len[seg] > 0, seg_len[seg], 1), 0)
            xy = path[seg] + (path[seg + 1] - path[seg]) * frac[:, None]
            direction = path[seg + 1] - path[seg]
            hd = np.arctan2(direction[:, 1], direction[:, 0])
            pos[idx, 0], pos[idx, 1] = xy[:, 0], xy[:, 1]
            pos[idx, 2] = prev.z + (script.shoulder_height - prev.z) * s
            pitch[idx] = prev.pitch + (script.walking_pitch - prev.pitch) * s
            heading[idx] = _angle_lerp(prev.heading, hd, s)
            roll[idx] = prev.roll * (1 - s)
            end_dir = path[-1] - path[-2]
            prev = Target(float(path[-1, 0]), float(path[-1, 1]), script.shoulder_height,
                          script.walking_pitch, float(math.atan2(end_dir[1], end_dir[0])), 0.0)
        else:
            tg = step.target
            pos[idx, 0] = prev.x + (tg.x - prev.x) * s
            pos[idx, 1] = prev.y + (tg.y - prev.y) * s
            pos[idx, 2] = prev.z + (tg.z - prev.z) * s
            pitch[idx] = prev.pitch + (tg.pitch - prev.pitch) * s
            heading[idx] = _angle_lerp(prev.heading, tg.heading, s)
            roll[idx] = prev.roll + (tg.roll - prev.roll) * s
            prev = tg

    if micro_motion and n:
        pitch = pitch + _ou(rng, n, dt, math.radians(2.0), 4.0)
        pos[:, 0] += _ou(rng, n, dt, 0.01, 3.0)
        pos[:, 2] += _ou(rng, n, dt, 0.01, 3.0)
    in_bed = script.room.in_bed(pos[:, 0], pos[:, 1])
    return PoseSeries(t, pos, pitch, heading, roll, in_bed, act, dt)

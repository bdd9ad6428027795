"""Scenario description for the synthetic ward: room geometry, RF and sensor
parameters, script bounds and seeds. Serialised as a JSON key-value document.

Room frame: metres, x along the bed (head end at low x), y across the room,
z up from the floor. Patients leave the bed over its ``y_max`` edge.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..data import DeploymentConfig

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RoomGeometry:
    bounds: tuple[float, float, float, float] = (0.0, 4.5, 0.0, 4.0)  # x0, x1, y0, y1
    bed: tuple[float, float, float, float] = (0.4, 2.5, 0.5, 1.4)     # footprint x0, x1, y0, y1
    mattress_height: float = 0.6
    chair: tuple[float, float] = (3.5, 2.7)
    chair_heading: float = math.pi  # facing -x
    # three antennas covering bed and chair: behind the bed head, above the bed, across the room
    antennas: dict[int, tuple[float, float, float]] = field(default_factory=lambda: {
        1: (0.05, 0.95, 1.9),
        2: (1.6, 0.95, 2.6),
        3: (4.45, 2.0, 1.5),
    })

    def in_bed(self, x, y):
        x0, x1, y0, y1 = self.bed
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def in_room(self, x, y) -> bool:
        x0, x1, y0, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass(frozen=True)
class RfChannelParams:
    reader_power: float = 1.0            # W
    reader_gain_dbi: float = 6.0
    backscatter_gain: float = 0.03       # linear, about -15 dB
    absorption: float = 0.05             # 1/m
    shadowing_sigma_db: float = 2.0
    rssi_quantum_db: float = 0.5
    phase_quantum_rad: float = 2.0 * math.pi / 4096
    sensitivity_dbm: float = -70.0
    orientation_floor: float = 0.03
    body_loss_db: float = 20.0           # extra loss when the antenna is behind the tag's broadside
    band_mhz: tuple[float, float] = (920.0, 926.0)
    n_channels: int = 12
    dwell_s: float = 0.25                # time on one channel per inventory round

    def __post_init__(self):
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing sigma must be >= 0")
        if self.rssi_quantum_db <= 0 or self.phase_quantum_rad <= 0:
            raise ValueError("quantisation steps must be positive")

    @property
    def constant_db(self) -> float:
        """P_t (dBm) + 2 G_t + K (dB)."""
        return (10.0 * math.log10(self.reader_power * 1e3) + 2.0 * self.reader_gain_dbi
                + 10.0 * math.log10(self.backscatter_gain))

    def channel_freqs_mhz(self) -> list[float]:
        lo, hi = self.band_mhz
        width = (hi - lo) / self.n_channels
        return [lo + (i + 0.5) * width for i in range(self.n_channels)]


@dataclass(frozen=True)
class SensorModel:
    threshold_deg: float = 50.0     # torso pitch from vertical at which the switch changes over
    hysteresis_deg: float = 10.0
    p_stuck: float = 0.05
    chatter_rate_hz: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_stuck <= 1.0:
            raise ValueError("p_stuck must lie in [0, 1]")
        if self.hysteresis_deg <= 0:
            raise ValueError("hysteresis must be positive")


@dataclass(frozen=True)
class ScriptBounds:
    exits: tuple[int, int] = (2, 6)
    lying_s: tuple[float, float] = (25.0, 70.0)
    sit_before_exit_s: tuple[float, float] = (4.0, 20.0)
    stand_s: tuple[float, float] = (2.0, 5.0)
    chair_s: tuple[float, float] = (10.0, 35.0)
    sit_after_return_s: tuple[float, float] = (3.0, 10.0)
    p_aborted_attempt: float = 0.3
    p_chair: float = 0.6
    transition_s: float = 2.0
    transition_speed: tuple[float, float] = (0.7, 2.0)   # multiplier on transition_s
    walking_speed: tuple[float, float] = (0.35, 0.8)    # m/s
    height_m: tuple[float, float] = (1.68, 0.09)        # mean, std


@dataclass(frozen=True)
class Scenario:
    room: RoomGeometry = field(default_factory=RoomGeometry)
    rf: RfChannelParams = field(default_factory=RfChannelParams)
    sensor: SensorModel = field(default_factory=SensorModel)
    script: ScriptBounds = field(default_factory=ScriptBounds)
    n_patients: int = 23
    read_rate_hz: float = 20.0
    dt: float = 0.05
    antenna_offset_sigma_db: float = 1.5
    seed: int = 7

    def deployment(self) -> DeploymentConfig:
        return DeploymentConfig(dict(self.room.antennas), tuple(self.rf.band_mhz), self.rf.reader_power)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["room"]["antennas"] = {str(k): list(v) for k, v in self.room.antennas.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        kw = {}
        if "room" in d:
            room = dict(d.pop("room"))
            if "antennas" in room:
                room["antennas"] = {int(k): tuple(v) for k, v in room["antennas"].items()}
            kw["room"] = RoomGeometry(**_tuples(room))
        if "rf" in d:
            kw["rf"] = RfChannelParams(**_tuples(d.pop("rf")))
        if "sensor" in d:
            kw["sensor"] = SensorModel(**d.pop("sensor"))
        if "script" in d:
            kw["script"] = ScriptBounds(**_tuples(d.pop("script")))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**kw, **d)


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def load_scenario(path: Path | None) -> Scenario:
    if path is None:
        return Scenario()
    return Scenario.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_scenario(scenario: Scenario, path: Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

"""Randomised patient scripts and whole-cohort generation.

Seed split rule: patient ``i`` (0-based) draws everything from
``SeedSequence(entropy=seed, spawn_key=(i,))``; its sub-streams (script,
pose, switch, reads) are the four children of that sequence, in that order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import PatientRecord, ground_truth_exits, save_dataset
from .pose import Activity, ActivityScript, ActivityStep, Target, pose_trajectory
from .reads import read_process
from .scenario import Scenario, save_scenario
from .sensor import tilt_switch

LYING_POSTURES = ("supine", "side_up", "side_down", "reclined")
_POSTURE_WEIGHTS = (0.45, 0.2, 0.15, 0.2)


def patient_seeds(seed: int, patient_index: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(entropy=seed, spawn_key=(patient_index,)).spawn(4)


def _lying_target(rng, room, posture: str) -> Target:
    x0, _, y0, y1 = room.bed
    h = room.mattress_height
    x = x0 + 0.45 + rng.uniform(-0.05, 0.1)
    y = 0.5 * (y0 + y1) + rng.uniform(-0.1, 0.1)
    pitch = math.radians(rng.uniform(84, 92))
    if posture == "supine":
        return Target(x, y, h + 0.12, pitch, 0.0, 0.0)
    if posture == "side_up":  # lying on the untagged shoulder
        return Target(x, y, h + 0.35, pitch, 0.0, math.radians(rng.uniform(60, 80)))
    if posture == "side_down":  # tagged shoulder pressed into the mattress
        return Target(x, y, h + 0.1, pitch, 0.0, math.radians(rng.uniform(140, 165)))
    # backrest raised
    return Target(x + 0.1, y, h + 0.4, math.radians(rng.uniform(42, 58)), 0.0, 0.0)


def _edge_sit_target(rng, room, x: float, shoulder: float) -> Target:
    y = room.bed[3] - rng.uniform(0.1, 0.2)
    z = room.mattress_height + 0.33 * shoulder + rng.uniform(-0.03, 0.03)
    return Target(x, y, z, math.radians(rng.uniform(5, 25)), math.pi / 2, 0.0)


def _stand_target(rng, room, x: float, shoulder: float, heading=math.pi / 2) -> Target:
    y = room.bed[3] + rng.uniform(0.25, 0.4)
    return Target(x, y, shoulder, math.radians(rng.uniform(2, 12)), heading, 0.0)


def random_script(patient_id: int, scenario: Scenario, rng: np.random.Generator) -> ActivityScript:
    room = scenario.room
    b = scenario.script
    height = float(np.clip(rng.normal(*b.height_m), 1.45, 1.95))
    shoulder = 0.82 * height
    speed = rng.uniform(*b.walking_speed)
    t_tr = b.transition_s * rng.uniform(*b.transition_speed)
    n_exits = int(rng.integers(b.exits[0], b.exits[1] + 1))
    x_lo, x_hi = room.bed[0] + 0.6, room.bed[1] - 0.5
    y_path = room.bed[3] + 0.7
    cx, cy = room.chair

    def lying():
        posture = str(rng.choice(LYING_POSTURES, p=_POSTURE_WEIGHTS))
        return ActivityStep(Activity.LYING_ON_BED, rng.uniform(*b.lying_s), _lying_target(rng, room, posture),
                            posture=posture)

    steps = [lying()]
    for _ in range(n_exits):
        x = rng.uniform(x_lo, x_hi)
        if rng.random() < b.p_aborted_attempt:
            steps.append(ActivityStep(Activity.SITTING_ON_BED, rng.uniform(4, 12), _edge_sit_target(rng, room, x, shoulder)))
            steps.append(lying())
        steps.append(ActivityStep(Activity.SITTING_ON_BED, rng.uniform(*b.sit_before_exit_s),
                                  _edge_sit_target(rng, room, x, shoulder)))
        stand = _stand_target(rng, room, x, shoulder)
        steps.append(ActivityStep(Activity.STANDING, rng.uniform(*b.stand_s), stand))
        if rng.random() < b.p_chair:
            wps = ((x, y_path + rng.uniform(-0.1, 0.2)), (cx - 0.5, cy + rng.uniform(-0.2, 0.2)))
            steps.append(_walk(wps, (stand.x, stand.y), speed))
            steps.append(ActivityStep(Activity.SITTING_ON_CHAIR, rng.uniform(*b.chair_s),
                                      Target(cx, cy, 0.45 + 0.33 * shoulder, math.radians(rng.uniform(10, 25)),
                                             room.chair_heading, 0.0)))
            steps.append(ActivityStep(Activity.STANDING, rng.uniform(*b.stand_s),
                                      Target(cx - 0.4, cy, shoulder, math.radians(rng.uniform(2, 12)),
                                             room.chair_heading, 0.0)))
            start = (cx - 0.4, cy)
        else:
            far = (rng.uniform(2.8, 4.0), rng.uniform(2.6, 3.6))
            wps = ((x, y_path), far)
            steps.append(_walk(wps, (stand.x, stand.y), speed))
            start = far
        x_back = rng.uniform(x_lo, x_hi)
        back = _stand_target(rng, room, x_back, shoulder, heading=-math.pi / 2)
        steps.append(_walk(((x_back, y_path), (back.x, back.y)), start, speed))
        steps.append(ActivityStep(Activity.STANDING, rng.uniform(*b.stand_s), back))
        steps.append(ActivityStep(Activity.SITTING_ON_BED, rng.uniform(*b.sit_after_return_s),
                                  _edge_sit_target(rng, room, x_back, shoulder)))
        steps.append(lying())
    return ActivityScript(patient_id, tuple(steps), room, shoulder, speed, t_tr)


def _walk(waypoints, start, speed) -> ActivityStep:
    pts = np.array([start] + list(waypoints))
    length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    return ActivityStep(Activity.WALKING, length / speed + 0.5, waypoints=tuple(tuple(map(float, w)) for w in waypoints))


@dataclass(frozen=True)
class SimulatedPatient:
    record: PatientRecord
    script: ActivityScript
    scripted_exits: tuple[float, ...]


def simulate_patient(patient_id: int, scenario: Scenario, patient_index: int | None = None,
                     script: ActivityScript | None = None) -> SimulatedPatient:
    seeds = patient_seeds(scenario.seed, patient_id if patient_index is None else patient_index)
    rng_script = np.random.default_rng(seeds[0])
    if script is None:
        script = random_script(patient_id, scenario, rng_script)
    pose = pose_trajectory(script, scenario.dt, seeds[1])
    switch = tilt_switch(pose.pitch, scenario.dt, scenario.sensor, seeds[2])
    ants = scenario.room.antennas
    ant_offsets = {a: float(rng_script.normal(0.0, scenario.antenna_offset_sigma_db)) for a in sorted(ants)}
    phase_offsets = rng_script.uniform(0.0, 2 * math.pi, size=(len(ants), scenario.rf.n_channels))
    table = read_process(pose, switch.ids, ants, scenario.rf, scenario.read_rate_hz, seeds[3],
                         ant_offsets, phase_offsets)
    record = PatientRecord(patient_id, table, pose.label_intervals())
    return SimulatedPatient(record, script, tuple(script.scripted_exit_times()))


def generate_cohort(n_patients: int | None = None, scenario: Scenario | None = None,
                    seed: int | None = None) -> list[SimulatedPatient]:
    scenario = scenario or Scenario()
    if seed is not None:
        scenario = _with_seed(scenario, seed)
    n = scenario.n_patients if n_patients is None else n_patients
    if n < 1:
        raise ValueError("need at least one patient")
    return [simulate_patient(i, scenario, i) for i in range(n)]


def _with_seed(scenario: Scenario, seed: int) -> Scenario:
    from dataclasses import replace
    return replace(scenario, seed=seed)


def write_cohort(patients: list[SimulatedPatient], scenario: Scenario, out_dir: Path) -> dict:
    """Write canonical CSVs, the scenario and ``manifest.json``; return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset([p.record for p in patients], out_dir, scenario.deployment())
    save_scenario(scenario, out_dir / "scenario.json")
    manifest = {
        "tool_version": __version__,
        "seed": scenario.seed,
        "n_patients": len(patients),
        "total_exits": sum(len(ground_truth_exits(p.record)) for p in patients),
        "deployment": scenario.deployment().to_dict(),
        "patients": [
            {
                "patient_id": p.record.patient_id,
                "n_readings": len(p.record.readings),
                "duration_s": p.record.duration,
                "exit_times": ground_truth_exits(p.record),
                "scripted_exit_times": list(p.scripted_exits),
                "seed_spawn_key": [p.record.patient_id],
                "script": p.script.to_dict(),
            }
            for p in patients
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest

"""Bed-exit alarms from classifier output and event-based scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import PatientRecord, out_of_bed_runs


@dataclass(frozen=True)
class AlarmConfig:
    k: int = 5              # majority vote over the last k predictions
    delta_t: float = 30.0   # seconds an alarm may precede the actual exit

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("smoothing window k must be a positive odd integer")
        if self.delta_t <= 0:
            raise ValueError("delta_t must be positive")


@dataclass(frozen=True)
class AlarmEvent:
    time: float
    patient_id: int


def smooth_predictions(pred: Sequence[int], k: int) -> np.ndarray:
    """Trailing majority vote over the last k predictions; the stream is preceded by in-bed votes."""
    p = np.asarray(pred, dtype=np.int64)
    if p.size == 0:
        return p
    c = np.concatenate([[0], np.cumsum(p)])
    idx = np.arange(1, p.size + 1)
    votes = c[idx] - c[np.maximum(idx - k, 0)]
    return (2 * votes > k).astype(np.int64)


def raise_alarms(times: Sequence[float], pred: Sequence[int], cfg: AlarmConfig = AlarmConfig(),
                 patient_id: int = 0) -> list[AlarmEvent]:
    """One alarm at every in-bed to out-of-bed transition of the smoothed stream.

    The smoothed state starts in-bed, and no alarm fires again until it has
    returned to in-bed.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.shape[0] != len(pred):
        raise ValueError("times and predictions differ in length")
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise ValueError("predictions must be time-sorted")
    s = smooth_predictions(pred, cfg.k)
    prev = np.concatenate([[0], s[:-1]])
    rising = np.flatnonzero((s == 1) & (prev == 0))
    out = []
    for i in rising:
        # simultaneous predictions can share a timestamp; keep alarm times strictly increasing
        if out and times[i] <= out[-1].time:
            continue
        out.append(AlarmEvent(float(times[i]), patient_id))
    return out


@dataclass
class PatientScore:
    patient_id: int
    exits: list[float]
    alarms: list[float]
    tp: int
    fp: int
    fn: int
    delays: list[float]
    detected: list[float] = field(default_factory=list)  # exit times with a TP, aligned with delays

    @property
    def actual(self) -> int:
        return len(self.exits)

    def to_dict(self) -> dict:
        return {"patient_id": self.patient_id, "actual": self.actual, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "exits": self.exits, "alarms": self.alarms, "delays": self.delays, "detected": self.detected}

    @classmethod
    def from_dict(cls, d: dict) -> "PatientScore":
        return cls(d["patient_id"], list(d["exits"]), list(d["alarms"]), d["tp"], d["fp"], d["fn"], list(d["delays"]),
                   list(d.get("detected", [])))


def score_events(alarm_times: Sequence[float], runs: Sequence[tuple[float, float]], delta_t: float,
                 patient_id: int = 0) -> PatientScore:
    """Score alarms against exits given as (exit time, end of its out-of-bed run)."""
    alarms = [float(a) for a in alarm_times]
    first: list[float | None] = [None] * len(runs)
    fp = 0
    for a in alarms:
        hit = False
        for e, (start, end) in enumerate(runs):
            if start - delta_t <= a <= end:
                hit = True
                if first[e] is None:
                    first[e] = a
        fp += not hit
    detected = [float(runs[e][0]) for e, f in enumerate(first) if f is not None]
    delays = [max(0.0, f - runs[e][0]) for e, f in enumerate(first) if f is not None]
    tp = len(delays)
    return PatientScore(patient_id, [float(s) for s, _ in runs], alarms, tp, fp, len(runs) - tp, delays, detected)


def score_alarms(alarms: Sequence[AlarmEvent] | Sequence[float], record: PatientRecord,
                 cfg: AlarmConfig = AlarmConfig()) -> PatientScore:
    times = [a.time if isinstance(a, AlarmEvent) else float(a) for a in alarms]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("alarms must be sorted")
    return score_events(times, out_of_bed_runs(record), cfg.delta_t, record.patient_id)


DEFAULT_DELAY_EDGES = (3.0, 10.0)


def delay_histogram(delays: Sequence[float], edges: Sequence[float] = DEFAULT_DELAY_EDGES) -> dict[str, float]:
    """Cumulative fraction of delays at or below each edge, plus the fraction above the last edge."""
    d = np.asarray(delays, dtype=np.float64)
    if d.size == 0:
        return {}
    out = {f"<={e:g}s": float(np.mean(d <= e)) for e in edges}
    out[f">{edges[-1]:g}s"] = float(np.mean(d > edges[-1]))
    return out


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1; each is 0 when its denominator is 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class EvaluationReport:
    patients: list[PatientScore]
    meta: dict = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return sum(p.tp for p in self.patients)

    @property
    def fp(self) -> int:
        return sum(p.fp for p in self.patients)

    @property
    def fn(self) -> int:
        return sum(p.fn for p in self.patients)

    @property
    def actual(self) -> int:
        return sum(p.actual for p in self.patients)

    @property
    def delays(self) -> list[float]:
        return [d for p in self.patients for d in p.delays]

    def metrics(self) -> dict[str, float]:
        p, r, f = prf(self.tp, self.fp, self.fn)
        return {"precision": p, "recall": r, "f1": f}

    @property
    def f1(self) -> float:
        return self.metrics()["f1"]

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "totals": {"actual": self.actual, "tp": self.tp, "fp": self.fp, "fn": self.fn},
            "metrics": self.metrics(),
            "delay_histogram": delay_histogram(self.delays),
            "patients": [p.to_dict() for p in self.patients],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls([PatientScore.from_dict(p) for p in d["patients"]], dict(d.get("meta", {})))

    def table(self) -> str:
        rows = [("Patient ID", "Actual", "TP", "FP", "FN")]
        rows += [(str(p.patient_id), str(p.actual), str(p.tp), str(p.fp), str(p.fn)) for p in self.patients]
        rows.append(("Total", str(self.actual), str(self.tp), str(self.fp), str(self.fn)))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        m = self.metrics()
        lines.append("")
        lines.append(f"precision {m['precision']:.4f}  recall {m['recall']:.4f}  F1 {m['f1']:.4f}")
        hist = delay_histogram(self.delays)
        if hist:
            lines.append("delays: " + "  ".join(f"{k} {v:.3f}" for k, v in hist.items()))
        return "\n".join(lines) + "\n"

    def delay_csv(self) -> str:
        lines = ["patient_id,exit_time_s,delay_s"]
        for p in self.patients:
            lines += [f"{p.patient_id},{e!r},{d!r}" for e, d in zip(p.detected, p.delays)]
        return "\n".join(lines) + "\n"


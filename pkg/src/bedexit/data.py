"""Data model and canonical CSV ingestion for RFID tag-read streams.

A dataset directory holds, per patient, one readings file and one labels file::

    patient_007_readings.csv   t_s,antenna_id,rssi_dbm,phase_rad,freq_mhz,tag_id
    patient_007_labels.csv     start_s,end_s,label

Timestamps are seconds since record start. ``tag_id`` is 1 or 2, ``label`` is
``in_bed`` or ``out_of_bed``. Files are UTF-8 with LF line endings.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

READINGS_HEADER = ("t_s", "antenna_id", "rssi_dbm", "phase_rad", "freq_mhz", "tag_id")
LABELS_HEADER = ("start_s", "end_s", "label")

_READINGS_RE = re.compile(r"^patient_(\d+)_readings\.csv$")

TWO_PI = 2.0 * math.pi


class DataValidationError(ValueError):
    """Raised when a dataset file or record violates the data model."""


class Label(enum.IntEnum):
    IN_BED = 0
    OUT_OF_BED = 1

    @property
    def token(self) -> str:
        return "in_bed" if self is Label.IN_BED else "out_of_bed"

    @classmethod
    def from_token(cls, token: str) -> "Label":
        if token == "in_bed":
            return cls.IN_BED
        if token == "out_of_bed":
            return cls.OUT_OF_BED
        raise ValueError(f"unknown label {token!r}")


@dataclass(frozen=True)
class TagReading:
    t: float
    antenna_id: int
    rssi: float
    phase: float
    channel_freq: float
    tag_id: int


@dataclass(frozen=True)
class DeploymentConfig:
    """Antenna set (id -> position in metres), frequency band in MHz, reader power in W."""

    antennas: dict[int, tuple[float, float, float]]
    band: tuple[float, float] = (920.0, 926.0)
    reader_power: float = 1.0

    def __post_init__(self):
        if len(self.antennas) < 1:
            raise ValueError("deployment needs at least one antenna")
        if not self.band[0] < self.band[1]:
            raise ValueError(f"invalid band {self.band}")

    @property
    def antenna_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.antennas))

    def to_dict(self) -> dict:
        return {
            "antennas": {str(k): list(v) for k, v in sorted(self.antennas.items())},
            "band": list(self.band),
            "reader_power": self.reader_power,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeploymentConfig":
        return cls(
            antennas={int(k): tuple(float(x) for x in v) for k, v in d["antennas"].items()},
            band=tuple(d.get("band", (920.0, 926.0))),
            reader_power=float(d.get("reader_power", 1.0)),
        )


@dataclass(frozen=True)
class LabelInterval:
    start: float
    end: float
    label: Label

    def __post_init__(self):
        if not self.start < self.end:
            raise DataValidationError(f"label interval start {self.start} >= end {self.end}")


class ReadingTable:
    """Columnar, time-sorted storage for a stream of tag readings.

    Slicing returns a view-backed table; iterating yields ``TagReading`` objects.
    """

    __slots__ = ("t", "antenna_id", "rssi", "phase", "freq", "tag_id")

    def __init__(self, t, antenna_id, rssi, phase, freq, tag_id):
        self.t = np.asarray(t, dtype=np.float64)
        self.antenna_id = np.asarray(antenna_id, dtype=np.int64)
        self.rssi = np.asarray(rssi, dtype=np.float64)
        self.phase = np.asarray(phase, dtype=np.float64)
        self.freq = np.asarray(freq, dtype=np.float64)
        self.tag_id = np.asarray(tag_id, dtype=np.int64)
        n = self.t.shape[0]
        for name in self.__slots__:
            arr = getattr(self, name)
            if arr.ndim != 1 or arr.shape[0] != n:
                raise ValueError(f"column {name} has shape {arr.shape}, expected ({n},)")

    @classmethod
    def empty(cls) -> "ReadingTable":
        return cls(*([] for _ in cls.__slots__))

    @classmethod
    def from_readings(cls, readings: Sequence[TagReading]) -> "ReadingTable":
        return cls(
            [r.t for r in readings],
            [r.antenna_id for r in readings],
            [r.rssi for r in readings],
            [r.phase for r in readings],
            [r.channel_freq for r in readings],
            [r.tag_id for r in readings],
        )

    def __len__(self) -> int:
        return self.t.shape[0]

    def __getitem__(self, idx) -> "ReadingTable":
        if isinstance(idx, (int, np.integer)):
            raise TypeError("use .reading(i) for a single reading")
        return ReadingTable(*(getattr(self, name)[idx] for name in self.__slots__))

    def reading(self, i: int) -> TagReading:
        return TagReading(
            float(self.t[i]), int(self.antenna_id[i]), float(self.rssi[i]),
            float(self.phase[i]), float(self.freq[i]), int(self.tag_id[i]),
        )

    def __iter__(self) -> Iterator[TagReading]:
        for i in range(len(self)):
            yield self.reading(i)

    def equals(self, other: "ReadingTable") -> bool:
        """Bitwise equality of every column."""
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in self.__slots__
        )

    def sorted(self) -> "ReadingTable":
        # stable sort on (t, antenna_id)
        order = np.lexsort((self.antenna_id, self.t))
        return self[order]


@dataclass(frozen=True, eq=False)
class PatientRecord:
    patient_id: int
    readings: ReadingTable
    labels: tuple[LabelInterval, ...]
    _reading_labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "_reading_labels", _label_lookup(self.labels, self.readings.t))

    @property
    def duration(self) -> float:
        """End of the labelled span, falling back to the last timestamp."""
        if self.labels:
            return self.labels[-1].end
        return float(self.readings.t[-1]) if len(self.readings) else 0.0

    @property
    def reading_labels(self) -> np.ndarray:
        """Ground-truth class (``Label`` value) of every reading."""
        return self._reading_labels

    def label_at(self, t) -> np.ndarray:
        return _label_lookup(self.labels, np.atleast_1d(np.asarray(t, dtype=np.float64)))

    def equals(self, other: "PatientRecord") -> bool:
        return (
            self.patient_id == other.patient_id
            and self.readings.equals(other.readings)
            and self.labels == other.labels
        )


def _label_lookup(labels: Sequence[LabelInterval], t: np.ndarray) -> np.ndarray:
    """Label per timestamp; intervals are [start, end) except the last, which is closed.

    Timestamps outside every interval get -1.
    """
    out = np.full(t.shape, -1, dtype=np.int64)
    if not labels or t.size == 0:
        return out
    starts = np.array([iv.start for iv in labels])
    ends = np.array([iv.end for iv in labels])
    idx = np.searchsorted(starts, t, side="right") - 1
    ok = idx >= 0
    safe = np.where(ok, idx, 0)
    inside = ok & (t < ends[safe])
    inside |= ok & (safe == len(labels) - 1) & (t == ends[-1])
    values = np.array([int(iv.label) for iv in labels])
    out[inside] = values[safe[inside]]
    return out


def validate_record(record: PatientRecord, config: DeploymentConfig | None = None) -> None:
    """Check every data-model invariant; raise ``DataValidationError`` on the first violation."""
    r = record.readings
    pid = record.patient_id
    if len(r):
        if np.any(np.diff(r.t) < 0):
            i = int(np.argmax(np.diff(r.t) < 0)) + 1
            raise DataValidationError(f"patient {pid}: timestamp decreases at reading {i}")
        if np.any((r.phase < 0) | (r.phase >= TWO_PI)):
            raise DataValidationError(f"patient {pid}: phase outside [0, 2pi)")
        if np.any(r.rssi > 0):
            raise DataValidationError(f"patient {pid}: positive RSSI")
        if np.any(~np.isin(r.tag_id, (1, 2))):
            raise DataValidationError(f"patient {pid}: tag_id must be 1 or 2")
        if config is not None:
            lo, hi = config.band
            if np.any((r.freq < lo) | (r.freq > hi)):
                raise DataValidationError(f"patient {pid}: channel frequency outside band {config.band}")
            unknown = np.setdiff1d(np.unique(r.antenna_id), config.antenna_ids)
            if unknown.size:
                raise DataValidationError(f"patient {pid}: unknown antenna ids {unknown.tolist()}")
    for a, b in zip(record.labels, record.labels[1:]):
        if b.start < a.end:
            raise DataValidationError(f"patient {pid}: label intervals overlap or are unsorted at t={b.start}")
    if len(r):
        missing = record.reading_labels < 0
        if np.any(missing):
            t = float(r.t[np.argmax(missing)])
            raise DataValidationError(f"patient {pid}: reading at t={t} is not covered by any label interval")


def ground_truth_exits(record: PatientRecord) -> list[float]:
    """Start times of OutOfBed intervals whose predecessor is InBed."""
    return [
        cur.start
        for prev, cur in zip(record.labels, record.labels[1:])
        if prev.label is Label.IN_BED and cur.label is Label.OUT_OF_BED
    ]


def out_of_bed_runs(record: PatientRecord) -> list[tuple[float, float]]:
    """(start, end) of each maximal OutOfBed run that begins with an exit."""
    runs = []
    labels = record.labels
    for i in range(1, len(labels)):
        if labels[i - 1].label is Label.IN_BED and labels[i].label is Label.OUT_OF_BED:
            end = labels[i].end
            j = i + 1
            while j < len(labels) and labels[j].label is Label.OUT_OF_BED:
                end = labels[j].end
                j += 1
            runs.append((labels[i].start, end))
    return runs


def effective_rate(record: PatientRecord, window: float) -> np.ndarray:
    """Reads per second in consecutive windows of ``window`` seconds covering the record."""
    if window <= 0:
        raise ValueError("window must be positive")
    t = record.readings.t
    if t.size == 0:
        return np.zeros(0)
    n_win = max(1, int(math.ceil(record.duration / window - 1e-9)))
    idx = np.minimum((t // window).astype(np.int64), n_win - 1)
    return np.bincount(idx, minlength=n_win) / window


# --- canonical CSV format -------------------------------------------------


def readings_path(directory: Path, patient_id: int) -> Path:
    return Path(directory) / f"patient_{patient_id:03d}_readings.csv"


def labels_path(directory: Path, patient_id: int) -> Path:
    return Path(directory) / f"patient_{patient_id:03d}_labels.csv"


def write_record(record: PatientRecord, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    r = record.readings
    # repr() of a float round-trips exactly through float()
    lines = [",".join(READINGS_HEADER)]
    for t, a, s, p, f, g in zip(r.t.tolist(), r.antenna_id.tolist(), r.rssi.tolist(),
                                r.phase.tolist(), r.freq.tolist(), r.tag_id.tolist()):
        lines.append(f"{t!r},{a},{s!r},{p!r},{f!r},{g}")
    readings_path(directory, record.patient_id).write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = [",".join(LABELS_HEADER)]
    for iv in record.labels:
        lines.append(f"{iv.start!r},{iv.end!r},{iv.label.token}")
    labels_path(directory, record.patient_id).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_csv(path: Path, header: tuple[str, ...]) -> list[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file, expected header {','.join(header)}")
        if tuple(h.strip() for h in got) != header:
            raise DataValidationError(
                f"{path}:1: header {','.join(got)!r} does not match {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, row))
    return rows


def read_record(directory: Path, patient_id: int) -> PatientRecord:
    rpath = readings_path(directory, patient_id)
    lpath = labels_path(directory, patient_id)
    if not lpath.exists():
        raise DataValidationError(f"{lpath}: missing labels file for patient {patient_id}")
    cols: list[list] = [[] for _ in READINGS_HEADER]
    for lineno, row in _read_csv(rpath, READINGS_HEADER):
        try:
            cols[0].append(float(row[0]))
            cols[1].append(int(row[1]))
            cols[2].append(float(row[2]))
            cols[3].append(float(row[3]))
            cols[4].append(float(row[4]))
            cols[5].append(int(row[5]))
        except ValueError as exc:
            raise DataValidationError(f"{rpath}:{lineno}: malformed row ({exc})") from None
        if not all(math.isfinite(cols[k][-1]) for k in (0, 2, 3, 4)):
            raise DataValidationError(f"{rpath}:{lineno}: non-finite value")
    t = np.array(cols[0], dtype=np.float64)
    if np.any(np.diff(t) < 0):
        i = int(np.argmax(np.diff(t) < 0))
        raise DataValidationError(f"{rpath}: timestamp decreases after data row {i + 1}")
    table = ReadingTable(*cols).sorted()

    labels = []
    for lineno, row in _read_csv(lpath, LABELS_HEADER):
        try:
            labels.append(LabelInterval(float(row[0]), float(row[1]), Label.from_token(row[2].strip())))
        except (ValueError, DataValidationError) as exc:
            raise DataValidationError(f"{lpath}:{lineno}: malformed row ({exc})") from None
    return PatientRecord(patient_id, table, tuple(labels))


def list_patients(directory: Path) -> list[int]:
    ids = []
    for p in Path(directory).iterdir():
        m = _READINGS_RE.match(p.name)
        if m:
            ids.append(int(m.group(1)))
    return sorted(ids)


def load_dataset(path: Path, config: DeploymentConfig | None = None) -> list[PatientRecord]:
    """Load and validate every patient in a canonical dataset directory, sorted by patient id."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {path} does not exist")
    records = []
    for pid in list_patients(path):
        rec = read_record(path, pid)
        validate_record(rec, config)
        records.append(rec)
    return records


def save_dataset(records: Sequence[PatientRecord], directory: Path,
                 config: DeploymentConfig | None = None) -> None:
    for rec in records:
        validate_record(rec, config)
        write_record(rec, directory)

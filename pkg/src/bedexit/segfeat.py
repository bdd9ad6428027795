"""Fixed-time sliding-window segmentation and engineered segment features.

Feature layout (``A`` = sorted antenna ids, blocks in this order):

* ``present``: 1 when the segment holds at least one reading.
* RSSI block: ``rssi_last``; per antenna ``rssi_present_k, rssi_mean_k,
  rssi_max_k, rssi_min_k, rssi_std_k, moving_k``; per antenna the mean RSSI of
  the two older sub-segments of the 3x extended window
  ``sub1_present_k, sub1_mean_k, sub2_present_k, sub2_mean_k``.
* Phase block: ``phase_last``; per antenna ``cfpr_present_k, cfpr_median_k,
  cfpr_abs_sum_k, cfpr_abs_std_k``.
* Event block: ``rc_k`` per antenna, majority-antenna one-hot ``omega_k``,
  last-antenna one-hot ``aid_last_k``.
* ID-Sensor mode only: ``id_last_1, id_last_2`` (one-hot of the latest tag
  ID), ``ri_1, ri_2`` (relative ID counts), then the RSSI block recomputed on
  the readings of each ID, prefixed ``id1_`` / ``id2_`` and carrying an extra
  ``idX_rssi_last_present`` bit.

Absent sub-blocks are zero with their presence bit cleared. Standard
deviations are population (ddof=0) values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Label, PatientRecord, ReadingTable

EXTENDED_FACTOR = 3


class Mode(str, enum.Enum):
    TAG = "tag"
    IDSENSOR = "idsensor"


@dataclass(frozen=True)
class SegmentationConfig:
    segment_len: float = 2.0
    step: float = 0.5
    extended_factor: int = EXTENDED_FACTOR

    def __post_init__(self):
        if self.segment_len <= 0 or self.step <= 0:
            raise ValueError("segment_len and step must be positive")
        if self.extended_factor != EXTENDED_FACTOR:
            raise ValueError("extended_factor is fixed at 3")


@dataclass(frozen=True)
class Segment:
    index: int
    end_time: float
    segment_len: float
    readings: ReadingTable
    extended: ReadingTable
    label: int

    @property
    def empty(self) -> bool:
        return len(self.readings) == 0


def segment_stream(record: PatientRecord, cfg: SegmentationConfig) -> list[Segment]:
    """Cut a record into segments ending at ``step, 2*step, ...`` up to the record duration.

    ``readings`` holds t in (end - segment_len, end]; ``extended`` holds t in
    (end - 3*segment_len, end]. Empty segments are kept (``Segment.empty``).
    """
    r = record.readings
    t = r.t
    n_seg = int(math.floor(record.duration / cfg.step + 1e-9))
    ends = cfg.step * np.arange(1, n_seg + 1)
    hi = np.searchsorted(t, ends, side="right")
    lo = np.searchsorted(t, ends - cfg.segment_len, side="right")
    lo_ext = np.searchsorted(t, ends - cfg.extended_factor * cfg.segment_len, side="right")
    gt = record.reading_labels
    segments = []
    for i in range(n_seg):
        a, b = int(lo[i]), int(hi[i])
        if b > a:
            seg_labels = gt[a:b]
            n_out = int(np.sum(seg_labels == Label.OUT_OF_BED))
            n_in = b - a - n_out
            if n_out == n_in:
                label = int(seg_labels[-1])
            else:
                label = int(Label.OUT_OF_BED if n_out > n_in else Label.IN_BED)
        else:
            label = int(record.label_at(ends[i])[0])
        segments.append(Segment(i, float(ends[i]), cfg.segment_len, r[a:b], r[int(lo_ext[i]):b], label))
    return segments


def wrap_phase(d: np.ndarray) -> np.ndarray:
    """Map phase differences onto [-pi, pi)."""
    return np.mod(np.asarray(d) + math.pi, 2.0 * math.pi) - math.pi


def compute_cfpr(readings: ReadingTable, antenna: int) -> tuple[np.ndarray, int]:
    """Same-channel phase rate (rad/s) between consecutive reads on one antenna.

    Returns ``(rates, n_zero_dt)``; pairs on different channels are skipped and
    pairs with zero time difference are skipped and counted.
    """
    m = readings.antenna_id == antenna
    t = readings.t[m]
    ph = readings.phase[m]
    f = readings.freq[m]
    if t.size < 2:
        return np.zeros(0), 0
    same = f[1:] == f[:-1]
    dt = np.diff(t)
    zero = same & (dt == 0)
    keep = same & (dt > 0)
    rates = wrap_phase(ph[1:][keep] - ph[:-1][keep]) / dt[keep]
    return rates, int(np.sum(zero))


def moving_flag(rssi: np.ndarray, t: np.ndarray) -> int:
    """1 when the (first) maximum RSSI is timestamped after the (first) minimum, else 0."""
    if rssi.size == 0:
        return 0
    return int(t[int(np.argmax(rssi))] > t[int(np.argmin(rssi))])


def event_features(segment: Segment, antennas: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(relative read count per antenna, majority-antenna one-hot, last-antenna one-hot)."""
    k = len(antennas)
    rc = np.zeros(k)
    omega = np.zeros(k)
    last = np.zeros(k)
    r = segment.readings
    if len(r) == 0:
        return rc, omega, last
    for j, a in enumerate(antennas):
        rc[j] = np.count_nonzero(r.antenna_id == a) / len(r)
    omega[int(np.argmax(rc))] = 1.0  # argmax picks the lowest antenna id on ties
    last_a = int(r.antenna_id[-1])
    if last_a in antennas:
        last[list(antennas).index(last_a)] = 1.0
    return rc, omega, last


@dataclass(frozen=True)
class FeatureLayout:
    mode: Mode
    antennas: tuple[int, ...]

    @property
    def key(self) -> str:
        return f"{self.mode.value}:" + ",".join(map(str, self.antennas))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(_layout_names(self.mode, self.antennas))

    @property
    def dim(self) -> int:
        return len(self.names)


def _rssi_block_names(antennas, prefix=""):
    names = [f"{prefix}rssi_last"]
    for k in antennas:
        names += [f"{prefix}{s}_{k}" for s in
                  ("rssi_present", "rssi_mean", "rssi_max", "rssi_min", "rssi_std", "moving")]
    for k in antennas:
        names += [f"{prefix}{s}_{k}" for s in ("sub1_present", "sub1_mean", "sub2_present", "sub2_mean")]
    return names


def _layout_names(mode: Mode, antennas) -> list[str]:
    names = ["present"]
    names += _rssi_block_names(antennas)
    names.append("phase_last")
    for k in antennas:
        names += [f"{s}_{k}" for s in ("cfpr_present", "cfpr_median", "cfpr_abs_sum", "cfpr_abs_std")]
    names += [f"rc_{k}" for k in antennas]
    names += [f"omega_{k}" for k in antennas]
    names += [f"aid_last_{k}" for k in antennas]
    if mode is Mode.IDSENSOR:
        names += ["id_last_1", "id_last_2", "ri_1", "ri_2"]
        for tag in (1, 2):
            names.append(f"id{tag}_rssi_last_present")
            names += _rssi_block_names(antennas, prefix=f"id{tag}_")
    return names


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout


def _rssi_block(seg_r: ReadingTable, ext_r: ReadingTable, end_time: float, seg_len: float,
                antennas) -> list[float]:
    out = [float(seg_r.rssi[-1]) if len(seg_r) else 0.0]
    for k in antennas:
        m = seg_r.antenna_id == k
        x = seg_r.rssi[m]
        if x.size:
            out += [1.0, float(x.mean()), float(x.max()), float(x.min()), float(x.std()),
                    float(moving_flag(x, seg_r.t[m]))]
        else:
            out += [0.0] * 6
    # sub-segments j=1,2 of (end - 3L, end]; the third one is the segment itself
    edges = (end_time - 3 * seg_len, end_time - 2 * seg_len, end_time - seg_len)
    in1 = (ext_r.t > edges[0]) & (ext_r.t <= edges[1])
    in2 = (ext_r.t > edges[1]) & (ext_r.t <= edges[2])
    for k in antennas:
        on_k = ext_r.antenna_id == k
        for sub in (in1, in2):
            x = ext_r.rssi[sub & on_k]
            out += [1.0, float(x.mean())] if x.size else [0.0, 0.0]
    return out


def extract_features(segment: Segment, mode: Mode | str, antennas: Sequence[int]) -> FeatureVector:
    mode = Mode(mode)
    antennas = tuple(antennas)
    r = segment.readings
    ext = segment.extended
    vals = [1.0 if len(r) else 0.0]
    vals += _rssi_block(r, ext, segment.end_time, segment.segment_len, antennas)
    vals.append(float(r.phase[-1]) if len(r) else 0.0)
    for k in antennas:
        rates, _ = compute_cfpr(r, k)
        if rates.size:
            a = np.abs(rates)
            vals += [1.0, float(np.median(rates)), float(a.sum()), float(a.std())]
        else:
            vals += [0.0] * 4
    rc, omega, last = event_features(segment, antennas)
    vals += rc.tolist() + omega.tolist() + last.tolist()
    if mode is Mode.IDSENSOR:
        if len(r):
            last_id = int(r.tag_id[-1])
            vals += [float(last_id == 1), float(last_id == 2)]
            n1 = np.count_nonzero(r.tag_id == 1)
            vals += [n1 / len(r), (len(r) - n1) / len(r)]
        else:
            vals += [0.0] * 4
        for tag in (1, 2):
            sub_r = r[r.tag_id == tag]
            sub_ext = ext[ext.tag_id == tag]
            vals.append(1.0 if len(sub_r) else 0.0)
            vals += _rssi_block(sub_r, sub_ext, segment.end_time, segment.segment_len, antennas)
    return FeatureVector(np.array(vals, dtype=np.float64), FeatureLayout(mode, antennas))


def feature_matrix(segments: Sequence[Segment], mode: Mode | str, antennas: Sequence[int]) -> np.ndarray:
    layout = FeatureLayout(Mode(mode), tuple(antennas))
    if not segments:
        return np.zeros((0, layout.dim))
    return np.stack([extract_features(s, mode, antennas).values for s in segments])


def featurize_record(record: PatientRecord, cfg: SegmentationConfig, mode: Mode | str,
                     antennas: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Segment a record and featurize it: returns (X, labels, end_times, empty_flags)."""
    segs = segment_stream(record, cfg)
    X = feature_matrix(segs, mode, antennas)
    y = np.array([s.label for s in segs], dtype=np.int64)
    ends = np.array([s.end_time for s in segs])
    empty = np.array([s.empty for s in segs], dtype=bool)
    return X, y, ends, empty


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        scaled = self.std > 0
        out = X.copy()
        out[..., scaled] = (X[..., scaled] - self.mean[scaled]) / self.std[scaled]
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(features) -> Normalizer:
    """Per-dimension mean/std; zero-variance dimensions are passed through untouched."""
    X = np.asarray([f.values if isinstance(f, FeatureVector) else f for f in features], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on empty input")
    return Normalizer(X.mean(axis=0), X.std(axis=0))


def apply_normalizer(norm: Normalizer, X: np.ndarray) -> np.ndarray:
    return norm.apply(X)


def write_feature_csv(path: Path, layout: FeatureLayout, rows: Sequence[tuple[int, float, int, np.ndarray]]) -> None:
    """Dump ``(patient_id, end_time, label, values)`` rows under a header naming every dimension."""
    header = ["patient_id", "end_time_s", "label", *layout.names]
    lines = [",".join(header)]
    for pid, end, label, values in rows:
        lines.append(",".join([str(pid), repr(float(end)), str(int(label))] + [repr(float(v)) for v in values]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

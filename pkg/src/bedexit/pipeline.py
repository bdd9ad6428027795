"""Trainable end-to-end predictors: record in, time-stamped P(out-of-bed) out."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .data import PatientRecord
from .lr import LRModel, lr_predict, lr_train
from .nn import serialize
from .nn.models import (ChannelStats, ConvLSTMConfig, ConvLSTMModel, FCNConfig, FCNModel, apply_channels,
                        convlstm_windows, fit_channel_stats)
from .nn.train import TrainResult, nn_train
from .segfeat import FeatureLayout, Mode, Normalizer, SegmentationConfig, featurize_record, fit_normalizer


class ModeMismatchError(ValueError):
    pass


FeatureCache = dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]


def featurize_all(records: Sequence[PatientRecord], seg: SegmentationConfig, mode: str,
                  antennas: Sequence[int]) -> FeatureCache:
    return {r.patient_id: featurize_record(r, seg, mode, antennas) for r in records}


@dataclass
class Predictor:
    kind: str
    mode: str
    antennas: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    def check_mode(self, mode: str) -> None:
        if Mode(mode).value != self.mode:
            raise ModeMismatchError(f"model was trained in {self.mode!r} mode, input is {Mode(mode).value!r}")

    def predict(self, record: PatientRecord, features=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def header(self) -> dict:
        raise NotImplementedError

    def save(self, path: Path) -> None:
        meta = {"mode": self.mode, "antennas": list(self.antennas), "tool_version": __version__, **self.meta,
                **self.header()}
        serialize.save(path, self.kind, meta, self.arrays())


@dataclass
class LRPredictor(Predictor):
    model: LRModel | None = None
    normalizer: Normalizer | None = None
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)

    def predict(self, record, features=None):
        X, _, ends, _ = features if features is not None else featurize_record(
            record, self.segmentation, self.mode, self.antennas)
        key = FeatureLayout(Mode(self.mode), self.antennas).key
        if X.shape[0] == 0:
            return ends, np.zeros(0)
        return ends, lr_predict(self.model, self.normalizer.apply(X), key)

    def arrays(self):
        return {"w": self.model.w, "norm_mean": self.normalizer.mean, "norm_std": self.normalizer.std}

    def header(self):
        return {"layout_key": self.model.layout_key,
                "segmentation": {"segment_len": self.segmentation.segment_len, "step": self.segmentation.step}}


@dataclass
class NNPredictor(Predictor):
    net: FCNModel | ConvLSTMModel | None = None
    stats: ChannelStats | None = None

    def predict(self, record, features=None):
        ch = apply_channels(record.readings, self.stats)
        if isinstance(self.net, ConvLSTMModel):
            wins = convlstm_windows(ch, self.net.cfg.window)
            p = self.net.stream(record.patient_id).run(wins, record.patient_id)
        else:
            p = self.net.predict_stream(ch)
        return record.readings.t.copy(), p

    def arrays(self):
        return self.net.state_dict()

    def header(self):
        arch = self.net.cfg
        d = {f: getattr(arch, f) for f in arch.__dataclass_fields__}
        return {"architecture": {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()},
                "channel_stats": self.stats.to_dict()}


def load_predictor(path: Path) -> Predictor:
    kind, meta, arrays = serialize.load(path)
    mode, antennas = meta["mode"], tuple(meta["antennas"])
    extra = {k: meta[k] for k in ("config_hash", "seed", "tool_version") if k in meta}
    if kind == "lr":
        seg = SegmentationConfig(**meta["segmentation"])
        return LRPredictor(kind, mode, antennas, extra, LRModel(arrays["w"], meta["layout_key"]),
                           Normalizer(arrays["norm_mean"], arrays["norm_std"]), seg)
    arch = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["architecture"].items()}
    if kind == "fcn":
        net = FCNModel(FCNConfig(**arch))
    elif kind == "convlstm":
        net = ConvLSTMModel(ConvLSTMConfig(**arch))
    else:
        raise serialize.ModelFormatError(f"unknown model kind {kind!r}")
    net.load_state_dict(arrays)
    return NNPredictor(kind, mode, antennas, extra, net, ChannelStats.from_dict(meta["channel_stats"]))


def split_validation(records: Sequence[PatientRecord], n_val: int, seed: int, salt: int = 0):
    """Deterministically hold out ``n_val`` training patients for early stopping."""
    if n_val <= 0 or len(records) <= n_val:
        return list(records), []
    rng = np.random.default_rng([seed, salt])
    idx = set(rng.choice(len(records), size=n_val, replace=False).tolist())
    train = [r for i, r in enumerate(records) if i not in idx]
    val = [r for i, r in enumerate(records) if i in idx]
    return train, val


def train_predictor(records: Sequence[PatientRecord], cfg: RunConfig, antennas: Sequence[int],
                    features: FeatureCache | None = None, salt: int = 0) -> tuple[Predictor, TrainResult | None]:
    """Fit a predictor on ``records`` (a training fold). Returns the predictor and, for networks, the loss curve."""
    antennas = tuple(sorted(antennas))
    meta = {"config_hash": cfg.hash(), "seed": cfg.seed}
    if not records:
        raise ValueError("no training records")
    if cfg.classifier == "lr":
        feats = features if features is not None else featurize_all(records, cfg.segmentation, cfg.mode, antennas)
        X = np.vstack([feats[r.patient_id][0] for r in records])
        y = np.concatenate([feats[r.patient_id][1] for r in records])
        norm = fit_normalizer(X)
        key = FeatureLayout(Mode(cfg.mode), antennas).key
        model = lr_train(norm.apply(X), y, cfg.lr, key)
        return LRPredictor("lr", cfg.mode, antennas, meta, model, norm, cfg.segmentation), None

    train, val = split_validation(records, cfg.n_val, cfg.seed, salt)
    stats = fit_channel_stats([r.readings for r in train], cfg.mode, antennas)
    streams = [(apply_channels(r.readings, stats), r.reading_labels) for r in train]
    val_streams = [(apply_channels(r.readings, stats), r.reading_labels) for r in val]
    net = FCNModel(cfg.fcn, seed=cfg.seed) if cfg.classifier == "fcn" else ConvLSTMModel(cfg.convlstm, seed=cfg.seed)
    result = nn_train(net, streams, val_streams, cfg.train)
    return NNPredictor(cfg.classifier, cfg.mode, antennas, meta, net, stats), result

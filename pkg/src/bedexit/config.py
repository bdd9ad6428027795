"""Run configuration: one JSON document, CLI overrides, and a stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .alarm import AlarmConfig
from .lr import LRConfig
from .nn.models import ConvLSTMConfig, FCNConfig
from .nn.train import TrainConfig
from .segfeat import Mode, SegmentationConfig

CLASSIFIERS = ("lr", "fcn", "convlstm")


@dataclass(frozen=True)
class RunConfig:
    mode: str = Mode.IDSENSOR.value
    classifier: str = "fcn"
    seed: int = 0
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    lr: LRConfig = field(default_factory=LRConfig)
    fcn: FCNConfig = field(default_factory=FCNConfig)
    convlstm: ConvLSTMConfig = field(default_factory=ConvLSTMConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    alarm: AlarmConfig = field(default_factory=AlarmConfig)
    n_val: int = 2   # training patients held out for early stopping

    def __post_init__(self):
        Mode(self.mode)
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.n_val < 0:
            raise ValueError("n_val must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        nested = {"segmentation": SegmentationConfig, "lr": LRConfig, "fcn": FCNConfig,
                  "convlstm": ConvLSTMConfig, "train": TrainConfig, "alarm": AlarmConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in nested.items():
            if key in d:
                d[key] = _build(typ, d[key])
        return cls(**d)

    def override(self, **kw) -> "RunConfig":
        """Replace top-level fields, or nested ones with ``section__field`` keys."""
        top = {k: v for k, v in kw.items() if "__" not in k and v is not None}
        cfg = replace(self, **top) if top else self
        for k, v in kw.items():
            if "__" in k and v is not None:
                section, name = k.split("__", 1)
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: v})})
        return cfg

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _build(typ, value: dict):
    kw = {}
    names = {f.name for f in fields(typ)}
    for k, v in value.items():
        if k not in names:
            raise ValueError(f"unknown key {k!r} for {typ.__name__}")
        kw[k] = tuple(v) if isinstance(v, list) else v
    return typ(**kw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def load_config(path: Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

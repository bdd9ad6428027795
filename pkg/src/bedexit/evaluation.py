"""Leave-one-patient-out evaluation and report regeneration from cached fold predictions."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .alarm import AlarmConfig, EvaluationReport, raise_alarms, score_alarms
from .config import RunConfig
from .data import PatientRecord
from .pipeline import FeatureCache, featurize_all, train_predictor


@dataclass(frozen=True, eq=False)
class FoldPrediction:
    patient_id: int
    times: np.ndarray
    prob: np.ndarray
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return {"patient_id": self.patient_id, "best_epoch": self.best_epoch,
                "times": self.times.tolist(), "prob": self.prob.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPrediction":
        return cls(d["patient_id"], np.asarray(d["times"], dtype=np.float64),
                   np.asarray(d["prob"], dtype=np.float64), d.get("best_epoch", 0))


def score_prediction(pred: FoldPrediction, record: PatientRecord, alarm: AlarmConfig):
    labels = (pred.prob >= 0.5).astype(np.int64)
    alarms = raise_alarms(pred.times, labels, alarm, record.patient_id)
    return score_alarms(alarms, record, alarm)


def report_from_predictions(preds: Sequence[FoldPrediction], records: Sequence[PatientRecord],
                            cfg: RunConfig) -> EvaluationReport:
    """Score cached fold predictions. Pure: the same inputs always give the same report."""
    by_id = {r.patient_id: r for r in records}
    missing = [p.patient_id for p in preds if p.patient_id not in by_id]
    if missing:
        raise ValueError(f"no labelled record for patients {missing}")
    scores = [score_prediction(p, by_id[p.patient_id], cfg.alarm) for p in sorted(preds, key=lambda p: p.patient_id)]
    meta = {
        "tool_version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "classifier": cfg.classifier,
        "mode": cfg.mode,
        "n_folds": len(preds),
        "folds": [{"test_patient": p.patient_id, "best_epoch": p.best_epoch}
                  for p in sorted(preds, key=lambda p: p.patient_id)],
    }
    return EvaluationReport(scores, meta)


def _run_fold(args) -> FoldPrediction:
    records, test_index, cfg, antennas, features = args
    test = records[test_index]
    train = [r for i, r in enumerate(records) if i != test_index]
    predictor, result = train_predictor(train, cfg, antennas, features, salt=test.patient_id)
    feats = features.get(test.patient_id) if features is not None else None
    times, prob = predictor.predict(test, feats)
    return FoldPrediction(test.patient_id, times, prob, result.best_epoch if result is not None else 0)


def lopo_predictions(records: Sequence[PatientRecord], cfg: RunConfig, antennas: Sequence[int],
                     n_jobs: int = 1, progress: Callable[[FoldPrediction], None] | None = None) -> list[FoldPrediction]:
    records = sorted(records, key=lambda r: r.patient_id)
    if len(records) < 2:
        raise ValueError("leave-one-patient-out needs at least two patients")
    if len({r.patient_id for r in records}) != len(records):
        raise ValueError("duplicate patient ids")
    antennas = tuple(sorted(antennas))
    features: FeatureCache | None = None
    if cfg.classifier == "lr":
        features = featurize_all(records, cfg.segmentation, cfg.mode, antennas)
    jobs = [(records, i, cfg, antennas, features) for i in range(len(records))]
    out = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            for fp in ex.map(_run_fold, jobs):
                out.append(fp)
                if progress:
                    progress(fp)
    else:
        for job in jobs:
            fp = _run_fold(job)
            out.append(fp)
            if progress:
                progress(fp)
    return out


def lopo_cv(records: Sequence[PatientRecord], cfg: RunConfig, antennas: Sequence[int], n_jobs: int = 1,
            progress=None) -> tuple[EvaluationReport, list[FoldPrediction]]:
    """Train on all patients but one, alarm and score on the held-out one, for every patient."""
    preds = lopo_predictions(records, cfg, antennas, n_jobs, progress)
    return report_from_predictions(preds, records, cfg), preds


def save_predictions(preds: Sequence[FoldPrediction], cfg: RunConfig, path: Path) -> None:
    doc = {"tool_version": __version__, "config_hash": cfg.hash(), "seed": cfg.seed, "config": cfg.to_dict(),
           "folds": [p.to_dict() for p in preds]}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_predictions(path: Path) -> tuple[list[FoldPrediction], RunConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [FoldPrediction.from_dict(f) for f in doc["folds"]], RunConfig.from_dict(doc["config"])


def write_report(report: EvaluationReport, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "report.json", "table": out_dir / "report.txt", "delays": out_dir / "delays.csv"}
    paths["json"].write_text(report.to_json(), encoding="utf-8")
    header = (f"# tool {report.meta.get('tool_version')}  config {report.meta.get('config_hash', '')[:12]}  "
              f"seed {report.meta.get('seed')}  {report.meta.get('classifier')}/{report.meta.get('mode')}\n")
    paths["table"].write_text(header + report.table(), encoding="utf-8")
    paths["delays"].write_text(report.delay_csv(), encoding="utf-8")
    return paths

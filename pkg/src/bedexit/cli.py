"""Command-line entry point: simulate, featurize, train, evaluate, sweep, report."""

from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .alarm import AlarmConfig, EvaluationReport
from .config import CLASSIFIERS, RunConfig, config_hash, load_config, save_config
from .data import DataValidationError, DeploymentConfig, load_dataset
from .evaluation import (FoldPrediction, load_predictions, lopo_predictions, report_from_predictions,
                         save_predictions, write_report)
from .nn.serialize import ModelFormatError
from .pipeline import ModeMismatchError, load_predictor, train_predictor
from .segfeat import FeatureLayout, Mode, featurize_record, write_feature_csv
from .sim import generate_cohort, write_cohort
from .sim.scenario import load_scenario


class CliError(Exception):
    pass


def _artifact_tag(cfg_hash: str, seed) -> str:
    return f"# tool_version={__version__} config_hash={cfg_hash} seed={seed}\n"


@contextlib.contextmanager
def _staged_dir(out: Path):
    """Write into ``out.partial`` and move it into place only on success."""
    out = Path(out)
    tmp = out.with_name(out.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def _deployment(data: Path) -> DeploymentConfig | None:
    scen = Path(data) / "scenario.json"
    if scen.exists():
        return load_scenario(scen).deployment()
    dep = Path(data) / "deployment.json"
    if dep.exists():
        return DeploymentConfig.from_dict(json.loads(dep.read_text(encoding="utf-8")))
    return None


def _load(data: Path):
    data = Path(data)
    if not data.is_dir():
        raise CliError(f"data directory {data} does not exist")
    dep = _deployment(data)
    records = load_dataset(data, dep)
    if dep is not None:
        antennas = dep.antenna_ids
    else:
        antennas = tuple(sorted({int(a) for r in records for a in set(r.readings.antenna_id.tolist())}))
    return records, antennas


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {}
    for name in ("mode", "classifier", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    cfg = cfg.override(**over)
    if isinstance(getattr(args, "k", None), int):
        cfg = cfg.override(alarm__k=args.k)
    if getattr(args, "max_epochs", None) is not None:
        cfg = cfg.override(train__max_epochs=args.max_epochs)
    if cfg.seed is not None:
        cfg = cfg.override(train__seed=cfg.seed, lr__seed=cfg.seed)
    return cfg


# --- subcommands ----------------------------------------------------------


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    n = args.n_patients if args.n_patients is not None else scenario.n_patients
    patients = generate_cohort(n, scenario)
    with _staged_dir(args.out) as tmp:
        manifest = write_cohort(patients, scenario, tmp)
        manifest["scenario_hash"] = config_hash(scenario.to_dict())
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {n} patients, {manifest['total_exits']} exits to {args.out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _resolve(args)
    records, antennas = _load(args.data)
    layout = FeatureLayout(Mode(cfg.mode), antennas)
    rows = []
    for r in records:
        X, y, ends, _ = featurize_record(r, cfg.segmentation, cfg.mode, antennas)
        rows += [(r.patient_id, e, lab, x) for e, lab, x in zip(ends, y, X)]
    out = Path(args.out)
    tmp = out.with_name(out.name + ".partial")
    write_feature_csv(tmp, layout, rows)
    body = tmp.read_text(encoding="utf-8")
    tmp.write_text(_artifact_tag(cfg.hash(), cfg.seed) + body, encoding="utf-8")
    os.replace(tmp, out)
    print(f"wrote {len(rows)} segments x {layout.dim} features to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    records, antennas = _load(args.data)
    predictor, result = train_predictor(records, cfg, antennas)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".partial")
    predictor.save(tmp)
    os.replace(tmp, out)
    save_config(cfg, out.with_suffix(".config.json"))
    if result is not None:
        curve = out.with_suffix(".loss.csv")
        result.write_curve(curve)
        curve.write_text(_artifact_tag(cfg.hash(), cfg.seed) + curve.read_text(encoding="utf-8"), encoding="utf-8")
        print(f"best epoch {result.best_epoch}; loss curve in {curve}")
    print(f"wrote {cfg.classifier} model ({cfg.mode}) to {out}")
    return 0


def _evaluate_model(args, cfg, records):
    predictor = load_predictor(args.model)
    predictor.check_mode(cfg.mode)
    preds = []
    for r in records:
        t, p = predictor.predict(r)
        preds.append(FoldPrediction(r.patient_id, t, p))
    cfg = cfg.override(classifier=predictor.kind)
    return report_from_predictions(preds, records, cfg), preds, cfg


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    records, antennas = _load(args.data)
    n_jobs = 1 if args.deterministic else args.n_jobs
    with _staged_dir(args.out) as tmp:
        if args.model is not None:
            report, preds, cfg = _evaluate_model(args, cfg, records)
        else:
            if len(records) < 2:
                raise CliError("evaluation needs at least two patients")
            preds = lopo_predictions(records, cfg, antennas, n_jobs,
                                     progress=None if args.quiet else _fold_progress)
            report = report_from_predictions(preds, records, cfg)
        save_predictions(preds, cfg, tmp / "predictions.json")
        save_config(cfg, tmp / "config.json")
        write_report(report, tmp)
    m = report.metrics()
    print(f"TP {report.tp}  FP {report.fp}  FN {report.fn}  P {m['precision']:.4f}  R {m['recall']:.4f}  "
          f"F1 {m['f1']:.4f}")
    return 0


def _fold_progress(fp) -> None:
    print(f"  fold patient {fp.patient_id} done", file=sys.stderr)


def cmd_report(args) -> int:
    preds, cfg = load_predictions(args.predictions)
    if args.k is not None:
        cfg = cfg.override(alarm__k=args.k)
    records, _ = _load(args.data)
    report = report_from_predictions(preds, records, cfg)
    with _staged_dir(args.out) as tmp:
        write_report(report, tmp)
        save_config(cfg, tmp / "config.json")
    sys.stdout.write(report.table())
    return 0


def _parse_grid(args) -> dict:
    grid = {}
    if args.grid is not None:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    for key, attr in (("segment_len", "segment_len"), ("step", "step"), ("k", "k"), ("classifier", "classifier_grid")):
        v = getattr(args, attr, None)
        if v:
            grid[key] = v
    for key, vals in grid.items():
        if key not in ("segment_len", "step", "k", "classifier"):
            raise CliError(f"unknown grid axis {key!r}")
        if not vals:
            raise CliError(f"grid axis {key!r} is empty")
    if not grid:
        raise CliError("empty grid")
    return grid


def sweep_configs(base: RunConfig, grid: dict) -> list[RunConfig]:
    axes = sorted(grid)
    out = []
    for combo in itertools.product(*(grid[a] for a in axes)):
        cfg = base
        for axis, v in zip(axes, combo):
            if axis == "classifier":
                cfg = cfg.override(classifier=v)
            elif axis == "k":
                cfg = cfg.override(alarm__k=int(v))
            else:
                cfg = cfg.override(**{f"segmentation__{axis}": float(v)})
        out.append(cfg)
    return out


def rank_results(results: list[tuple[RunConfig, EvaluationReport]]) -> list[dict]:
    rows = [{"f1": rep.f1, "config_hash": cfg.hash(), "metrics": rep.metrics(),
             "totals": {"tp": rep.tp, "fp": rep.fp, "fn": rep.fn}, "config": cfg.to_dict()} for cfg, rep in results]
    rows.sort(key=lambda r: (-r["f1"], r["config_hash"]))
    return rows


def cmd_sweep(args) -> int:
    base = _resolve(args)
    grid = _parse_grid(args)
    records, antennas = _load(args.data)
    configs = sweep_configs(base, grid)
    n_jobs = 1 if args.deterministic else args.n_jobs
    cache: dict[str, list] = {}
    results = []
    for cfg in configs:
        # the alarm window does not affect training, so predictions are shared across k
        key = cfg.override(alarm=AlarmConfig()).hash()
        if key not in cache:
            cache[key] = lopo_predictions(records, cfg, antennas, n_jobs)
        results.append((cfg, report_from_predictions(cache[key], records, cfg)))
    ranked = rank_results(results)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"tool_version": __version__, "seed": base.seed, "grid": grid, "ranking": ranked}
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for i, row in enumerate(ranked, 1):
        c = row["config"]
        print(f"{i:3d}  F1 {row['f1']:.4f}  {c['classifier']:8s} seg {c['segmentation']['segment_len']:g}"
              f" step {c['segmentation']['step']:g} k {c['alarm']['k']}  {row['config_hash'][:12]}")
    return 0


# --- parser ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser, data=True) -> None:
    if data:
        p.add_argument("--data", type=Path, required=True, help="dataset directory (canonical CSVs)")
    p.add_argument("--config", type=Path, default=None, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    p.add_argument("--classifier", choices=CLASSIFIERS, default=None)
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bedexit", description="RFID bed-exit recognition pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    p.add_argument("--scenario", type=Path, default=None, help="scenario JSON (defaults built in)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-patients", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", help="dump the engineered segment features as CSV")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one model on every patient in the dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="model file")
    p.add_argument("--max-epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="leave-one-patient-out evaluation")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--k", type=int, default=None, help="alarm smoothing window")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--model", type=Path, default=None, help="score this trained model instead of running LOPO")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over segmentation, alarm window and classifier")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="ranking JSON")
    p.add_argument("--grid", type=Path, default=None, help="JSON object of axis -> list of values")
    p.add_argument("--segment-len", type=float, nargs="*", default=None)
    p.add_argument("--step", type=float, nargs="*", default=None)
    p.add_argument("--k", type=int, nargs="*", default=None)
    p.add_argument("--classifier-grid", dest="classifier_grid", choices=CLASSIFIERS, nargs="*", default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="rebuild a report from cached fold predictions")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limiter = threadpool_limits(limits=1) if args.deterministic else contextlib.nullcontext()
    try:
        with limiter:
            return args.func(args)
    except (CliError, DataValidationError, ModeMismatchError, ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ingest, train, tune, forecast, evaluate, ablate, cluster.

Every subcommand writes its outputs atomically and drops a run manifest
(config, seed, data fingerprint, package version) next to them. A JSON
config file may supply any training option; command-line flags win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import io
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .analysis import elbow_curve, extract_queries, kmeans
from .dataset import (Dataset, cumulative_to_incidence, load_dynamic_features,
                      load_incidence_csv, load_static_features,
                      write_long_csv)
from .errors import ConfigError, CrosscastError, UsageError
from .evaluator import forecast_rows, metric_rows, run_protocol, wape
from .model import TrainConfig, VARIANT_CODES
from .synthetic import SynthSpec, generate
from .trainer import (atomic_write_text, config_from_dict, config_to_dict,
                      load_checkpoint, save_checkpoint, train, weekly_task,
                      write_loss_trace)

log = logging.getLogger(__name__)

TASKS = {"cases": "cases", "hosp": "hospitalizations", "deaths": "deaths"}

GRID = {
    "d": (16, 32),
    "l": (7, 14),
    "lr": (0.001, 0.005, 0.01),
    "iters": (600, 1200, 1800),
}

CONFIG_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _write_manifest(out_dir: Path, command: str, config: TrainConfig | None,
                    dataset: Dataset | None, args: argparse.Namespace) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config_to_dict(config) if config else None,
        "seed": config.seed if config else getattr(args, "seed", None),
        "data_fingerprint": dataset.fingerprint() if dataset else None,
        "args": {k: str(v) for k, v in vars(args).items() if k != "func"},
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2))


def _load_dataset(args) -> Dataset:
    if getattr(args, "synthetic", False):
        spec = SynthSpec()
        dataset, _ = generate(spec, getattr(args, "synthetic_seed", 0))
        return dataset
    if not args.data:
        raise UsageError("--data is required (or --synthetic for the built-in benchmark)")
    task = TASKS[args.task] if getattr(args, "task", None) else "cases"
    dataset = load_incidence_csv(args.data, task)
    if getattr(args, "cumulative", False):
        dataset = cumulative_to_incidence(dataset)
    if getattr(args, "features_static", None):
        dataset.static = load_static_features(args.features_static, dataset)
    if getattr(args, "features_dynamic", None):
        dataset.dynamic = load_dynamic_features(args.features_dynamic, dataset)
    return dataset


def _build_config(args) -> TrainConfig:
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base.update(loaded)
    overrides = {
        "d": getattr(args, "hidden", None),
        "l": getattr(args, "segment_len", None),
        "lr": getattr(args, "lr", None),
        "iters": getattr(args, "iters", None),
        "seed": getattr(args, "seed", None),
        "k": getattr(args, "week_offset", None),
        "variant": getattr(args, "variant", None),
        "batch": getattr(args, "batch", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(base)


def _issue_date(args) -> dt.date:
    try:
        return dt.date.fromisoformat(args.issue_date)
    except (TypeError, ValueError):
        raise UsageError(f"--issue-date must be ISO formatted, got {args.issue_date!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    dataset = _load_dataset(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_long_csv(dataset, out / "data.csv.tmp")
    (out / "data.csv.tmp").replace(out / "data.csv")
    _write_manifest(out, "ingest", None, dataset, args)
    print(f"wrote {out / 'data.csv'}: {dataset.n_regions} regions x {dataset.n_days} days "
          f"(zero-filled {dataset.report.zero_filled}, clamped {dataset.report.clamped})")
    return 0


def cmd_train(args) -> int:
    dataset = _load_dataset(args)
    config = _build_config(args)
    result = train(dataset, config, weekly=weekly_task(dataset.kind))
    out = Path(args.out)
    save_checkpoint(result.model, out / "checkpoint.json", dataset,
                    meta={"task": dataset.kind, "best_val": result.best_val})
    write_loss_trace(result, out / "loss_trace.csv")
    _write_manifest(out, "train", config, dataset, args)
    print(f"trained k={config.k} model: best val {result.best_val:.6g} "
          f"@ iter {result.best_iteration} ({result.wall_seconds:.1f}s)")
    return 0


def _tune_one(job):
    dataset, config = job
    result = train(dataset, config)
    return config, result.best_val


def cmd_tune(args) -> int:
    dataset = _load_dataset(args)
    base = _build_config(args)
    combos = [dataclasses.replace(base, d=d, l=l, lr=lr, iters=iters)
              for d, l, lr, iters in itertools.product(*GRID.values())]
    jobs = [(dataset, c) for c in combos]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            scored = list(pool.map(_tune_one, jobs))
    else:
        scored = [_tune_one(j) for j in jobs]
    scored.sort(key=lambda cv: cv[1])
    best_config, best_val = scored[0]

    out = Path(args.out)
    rows = [["d", "l", "lr", "iters", "val_loss"]]
    rows += [[str(c.d), str(c.l), repr(c.lr), str(c.iters), repr(v)] for c, v in scored]
    _write_csv(out / "grid.csv", rows)
    result = train(dataset, best_config)
    save_checkpoint(result.model, out / "checkpoint.json", dataset,
                    meta={"task": dataset.kind, "best_val": result.best_val, "tuned": True})
    _write_manifest(out, "tune", best_config, dataset, args)
    print(f"grid best: d={best_config.d} l={best_config.l} lr={best_config.lr} "
          f"iters={best_config.iters} (val {best_val:.6g})")
    return 0


def cmd_forecast(args) -> int:
    dataset = _load_dataset(args)
    model, payload = load_checkpoint(args.checkpoint, dataset)
    issue = _issue_date(args)
    issue_day = dataset.day_of_date(issue)
    daily = model.forecast(dataset, issue_day)
    weekly = weekly_task(payload["meta"].get("task", dataset.kind))
    k = model.config.k
    rows = [["region", "issue_date", "target_end_date", "week_offset", "value"]]
    for i, region in enumerate(dataset.regions):
        if weekly:
            end = issue + dt.timedelta(days=k * 7)
            rows.append([region, issue.isoformat(), end.isoformat(), str(k),
                         repr(float(daily[i].sum()))])
        else:
            for j in range(daily.shape[1]):
                end = issue + dt.timedelta(days=(k - 1) * 7 + j + 1)
                rows.append([region, issue.isoformat(), end.isoformat(), str(k),
                             repr(float(daily[i, j]))])
    out = Path(args.out)
    _write_csv(out / "forecast.csv", rows)
    _write_manifest(out, "forecast", model.config, dataset, args)
    print(f"wrote {out / 'forecast.csv'} ({len(rows) - 1} rows)")
    return 0


def cmd_evaluate(args) -> int:
    dataset = _load_dataset(args)
    base = _build_config(args)
    issue = _issue_date(args)
    configs = {k: dataclasses.replace(base, k=k) for k in range(1, args.weeks + 1)}
    result = run_protocol(dataset, issue, dataset.kind, configs, weeks=args.weeks)
    out = Path(args.out)
    _write_csv(out / "forecast.csv", forecast_rows(result.records))
    _write_csv(out / "metrics.csv", metric_rows(result.report))
    _write_manifest(out, "evaluate", base, dataset, args)
    if result.report.available:
        print(f"pooled WAPE {result.report.pooled:.4f} over {args.weeks} weeks")
    else:
        print("forecasts written; ground truth unavailable, metrics skipped")
    return 0


def cmd_ablate(args) -> int:
    dataset = _load_dataset(args)
    base = _build_config(args)
    variants = [args.variant] if args.variant else list(VARIANT_CODES)
    weekly = weekly_task(dataset.kind)
    horizon = base.horizon
    issue_day = dataset.n_days - horizon
    training_view = dataset.truncated(issue_day)
    truth = dataset.values[:, issue_day:issue_day + horizon]

    rows = [["variant", "wape"]]
    for code in variants:
        result = train(training_view, base.with_variant(code), weekly=weekly)
        daily = result.model.forecast(training_view, issue_day)
        if weekly:
            score = wape(daily.sum(axis=1), truth.sum(axis=1))
        else:
            score = wape(daily, truth)
        rows.append([code, repr(score)])
        print(f"variant {code}: WAPE {score:.4f}")
    out = Path(args.out)
    _write_csv(out / "ablation.csv", rows)
    _write_manifest(out, "ablate", base, dataset, args)
    return 0


def cmd_cluster(args) -> int:
    dataset = _load_dataset(args)
    model, _ = load_checkpoint(args.checkpoint, dataset)
    last_day = dataset.day_of_date(_issue_date(args)) if args.issue_date else dataset.n_days
    queries = extract_queries(model, dataset, last_day)
    k_max = min(args.k_max, dataset.n_regions)
    curve = elbow_curve(queries, k_max, seed=args.seed)
    assignment = kmeans(queries, args.clusters, seed=args.seed)
    out = Path(args.out)
    _write_csv(out / "clusters.csv",
               [["region", "cluster"]] + [[r, str(int(c))] for r, c in
                                          zip(dataset.regions, assignment.labels)])
    _write_csv(out / "elbow.csv", [["K", "sse"]] + [[str(k), repr(s)] for k, s in curve])
    _write_manifest(out, "cluster", model.config, dataset, args)
    print(f"wrote clusters for K={args.clusters}; elbow curve up to K={k_max}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="incidence CSV (long or wide format)")
    p.add_argument("--features-static", help="static feature CSV (region,<feature>...)")
    p.add_argument("--features-dynamic", help="dynamic feature CSV (region,date,<feature>...)")
    p.add_argument("--task", choices=sorted(TASKS), help="incidence kind (default cases)")
    p.add_argument("--cumulative", action="store_true",
                   help="input values are cumulative; difference them on load")
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in synthetic benchmark instead of --data")
    p.add_argument("--synthetic-seed", type=int, default=0)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--segment-len", type=int, help="segment length l")
    p.add_argument("--hidden", type=int, help="embedding size d")
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANT_CODES)
    p.add_argument("--week-offset", type=int, choices=range(1, 5))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crosscast",
                                     description="Cross-series attention forecasting pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="convert input CSVs to the canonical long format")
    _add_common_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one per-week-offset model")
    _add_common_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="grid search over the hyperparameter table")
    _add_common_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("forecast", help="forecast from a trained checkpoint")
    _add_common_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--issue-date", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="run the rolling 4-week protocol at an issue date")
    _add_common_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--issue-date", required=True)
    p.add_argument("--weeks", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="score model variants on a final-week holdout")
    _add_common_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("cluster", help="cluster per-region query vectors")
    _add_common_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--issue-date")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    return parser


def run_command(argv: list[str]) -> int:
    """Dispatch a CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CrosscastError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

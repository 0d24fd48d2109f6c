"""Command-line entry point: ``cfa-forecast {synth,train,eval,grid,probe} --config run.json``.

Exit codes: 0 ok, 2 configuration, 3 training fault, 4 evaluation fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .data import generate_synthetic_dataset, read_jsonl, split_real, write_jsonl
from .estimators import load_forecaster, make_forecaster, save_forecaster
from .evaluation import (
    EvalReport,
    GridConfig,
    eval_mse,
    eval_nd,
    forecast_records,
    invariance_probe,
    run_grid,
    write_forecast_csv,
)
from .exceptions import CFAError, ConfigError, EvaluationError
from .models import write_key_dump
from .spectral import dominant_bin

logger = logging.getLogger("cfa_forecast")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out(out: Path, files, overwrite: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    existing = [f for f in files if (out / f).exists()]
    if existing and not overwrite:
        raise ConfigError(f"output_dir: {out} already holds {existing}; pass --overwrite to replace")


def _load_split(ref: C.DatasetRef):
    series = read_jsonl(ref.path)
    if not series:
        raise ConfigError(f"{ref.path}: dataset is empty")
    tau_c, tau_f = ref.tau_c, ref.tau_f
    if tau_c is None or tau_f is None:
        freq = series[0].freq_tag
        if freq not in C.FREQ_DEFAULTS:
            raise ConfigError(f"{ref.name}: tau_c/tau_f required for frequency tag {freq!r}")
        tau_c = tau_c if tau_c is not None else C.FREQ_DEFAULTS[freq][0]
        tau_f = tau_f if tau_f is not None else C.FREQ_DEFAULTS[freq][1]
    if ref.kind == "synthetic":
        # Each series already is one context plus one forecast window.
        from .data import DatasetSplit
        split = split_real(series, tau_c, tau_f, name=ref.name)
        return DatasetSplit(train=series, test=split.test, tau_c=tau_c, tau_f=tau_f,
                            freq_tag=series[0].freq_tag, name=ref.name, skipped=split.skipped)
    return split_real(series, tau_c, tau_f, name=ref.name)


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    run = C.synth_run(C.load_json(args.config), args.out, args.seed)
    _prepare_out(run.output_dir, ["train.jsonl", "test.jsonl", "manifest.json"], args.overwrite)
    series = generate_synthetic_dataset(run.synthetic, prefix=run.name)
    write_jsonl(series[:run.n_train], run.output_dir / "train.jsonl")
    write_jsonl(series[run.n_train:], run.output_dir / "test.jsonl")
    syn = dict(vars(run.synthetic))
    _write_json(run.output_dir / "manifest.json", {
        "name": run.name, "synthetic": syn, "n_train": run.n_train,
        "n_test": len(series) - run.n_train, "files": {"train": "train.jsonl", "test": "test.jsonl"},
    })
    logger.info("wrote %d train / %d test series to %s", run.n_train, len(series) - run.n_train, run.output_dir)
    return 0


def cmd_train(args) -> int:
    run = C.train_run(C.load_json(args.config), args.out, args.seed, args.resume)
    _prepare_out(run.output_dir, ["model.ckpt", "history.json"], args.overwrite)
    sources = [_load_split(ref) for ref in run.sources]
    est = make_forecaster(run.model, **run.params)
    if run.resume is not None:
        prev = load_forecaster(run.resume)
        if prev.model_name != run.model or (
                run.model != "mean" and prev.architecture() != est.architecture()):
            raise ConfigError(f"resume: checkpoint {run.resume} hyperparameters do not match the config")
        if run.model != "mean":
            est.set_params(warm_start=True)
            est.net_ = prev.net_
            est.history_ = []
    est.fit(sources)
    save_forecaster(est, run.output_dir / "model.ckpt")
    _write_json(run.output_dir / "history.json", {
        "model": run.model, "params": est.get_params(), "sources": [s.metadata for s in sources],
        "epochs": est.history_,
    })
    return 0


def cmd_eval(args) -> int:
    run = C.eval_run(C.load_json(args.config), args.out, args.dump_keys)
    if not run.checkpoint.exists():
        raise EvaluationError(f"checkpoint not found: {run.checkpoint}")
    files = ["report.json", "forecasts.csv"] + (["keys.csv"] if run.dump_keys else [])
    _prepare_out(run.output_dir, files, args.overwrite)
    est = load_forecaster(run.checkpoint)
    split = _load_split(run.target)
    report = EvalReport(meta={"checkpoint": str(run.checkpoint), "model": est.model_name,
                              "target": split.metadata})
    for m in run.metrics:
        value = eval_mse(est, split) if m == "mse" else eval_nd(est, split)
        report.add("checkpoint", split.name, est.model_name, m, [value])
    report.write_json(run.output_dir / "report.json")
    write_forecast_csv(run.output_dir / "forecasts.csv", forecast_records(est, split))
    if run.dump_keys:
        if est.model_name == "mean":
            raise EvaluationError("the mean model has no representation to dump")
        raw = np.stack([s.raw_context for s in split.test])
        periods = raw.shape[1] / dominant_bin(raw)
        write_key_dump(run.output_dir / "keys.csv", est.transform(raw), periods)
    return 0


def cmd_grid(args) -> int:
    ranges = C.parse_ranges(args.ranges) if args.ranges else None
    run = C.grid_run(C.load_json(args.config), args.out, args.seed, ranges)
    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "cells.jsonl"
    if args.overwrite:
        for f in ("cells.jsonl", "grid.json", "grid.csv"):
            (out / f).unlink(missing_ok=True)
    cfg = GridConfig(base=run.synthetic, n_train=run.n_train, model_params=run.model_params,
                     master_seed=run.master_seed, metric=run.metric)
    report = run_grid(run.source_ranges, run.target_ranges, run.models, run.seeds, cfg,
                      manifest_path=manifest, jobs=args.jobs)
    report.write_json(out / "grid.json")
    report.write_table_csv(out / "grid.csv", run.models)
    return 0


def cmd_probe(args) -> int:
    run = C.probe_run(C.load_json(args.config), args.out, args.seed)
    _prepare_out(run.output_dir, ["probe.json"], args.overwrite)
    try:
        result = invariance_probe(run.dump_a, run.dump_b, run.source_range, run.period_scale, run.seed)
    except CFAError as exc:
        raise EvaluationError(str(exc)) from exc
    result["dump_a"], result["dump_b"] = str(run.dump_a), str(run.dump_b)
    result["source_range"] = list(run.source_range)
    _write_json(run.output_dir / "probe.json", result)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "grid": cmd_grid, "probe": cmd_probe}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfa-forecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="override output_dir")
        p.add_argument("--overwrite", action="store_true")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--dump-keys", action="store_true", help="also write keys.csv")
        if name == "grid":
            p.add_argument("--ranges", default=None, help="e.g. 10:15,15:20 (sources = targets)")
        if name == "train":
            p.add_argument("--resume", default=None, help="checkpoint to continue training from")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for attr in ("dump_keys", "ranges", "resume"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except CFAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4 if args.command == "eval" else 2


if __name__ == "__main__":
    sys.exit(main())

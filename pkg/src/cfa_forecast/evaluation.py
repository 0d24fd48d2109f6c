"""Zero-shot evaluation: metrics, the synthetic range grid, leave-one-out real-data runs and invariance probes."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import (
    DatasetSplit,
    SyntheticConfig,
    TimeSeries,
    generate_synthetic_dataset,
    split_real,
    split_synthetic,
    stack_windows,
)
from .estimators import BaseForecaster, make_forecaster
from .exceptions import ContractError, EvaluationError
from .spectral import dft_magnitudes, dominant_bin

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------- metrics


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"shapes {pred.shape} and {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def normalized_deviation(pred, target) -> float:
    """``sum|pred - target| / sum|target|`` over every point."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"shapes {pred.shape} and {target.shape} differ")
    denom = np.abs(target).sum()
    if denom == 0:
        raise EvaluationError("normalized deviation undefined: all targets are zero")
    return float(np.abs(pred - target).sum() / denom)


def _check_test(split: DatasetSplit):
    if not split.test:
        raise EvaluationError(f"{split.name or 'dataset'}: empty test set")


def forecast_split(model: BaseForecaster, split: DatasetSplit, horizon: int | None = None) -> np.ndarray:
    """Scaled forecasts ``[n_test, horizon]`` for every test window."""
    _check_test(split)
    ctx, _, _, _ = stack_windows(split.test)
    return model.forecast_scaled(ctx, horizon or split.tau_f)


def eval_mse(model: BaseForecaster, split: DatasetSplit) -> float:
    """MSE of autoregressive forecasts against scaled targets."""
    pred = forecast_split(model, split)
    _, tgt, _, _ = stack_windows(split.test)
    return mse(pred, tgt)


def eval_nd(model: BaseForecaster, split: DatasetSplit) -> float:
    """Normalized deviation on unscaled forecasts and targets."""
    pred = forecast_split(model, split)
    _, _, mean, std = stack_windows(split.test)
    raw_pred = pred * std[:, None] + mean[:, None]
    raw_tgt = np.stack([s.target for s in split.test])
    return normalized_deviation(raw_pred, raw_tgt)


def forecast_records(model: BaseForecaster, split: DatasetSplit):
    """Rows ``(series_id, step, y_true, y_pred)`` on the unscaled scale."""
    pred = forecast_split(model, split)
    rows = []
    for s, p in zip(split.test, pred):
        raw = p * s.scale_std + s.scale_mean
        rows.extend((s.series_id, i, float(y), float(q)) for i, (y, q) in enumerate(zip(s.target, raw)))
    return rows


def write_forecast_csv(path, records) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "step", "y_true", "y_pred"])
        for sid, step, y, p in records:
            w.writerow([sid, step, repr(y), repr(p)])


# -------------------------------------------------------------------- report


def _sample_std(vals) -> float:
    # identical values give exactly 0, not a rounding residue
    return 0.0 if min(vals) == max(vals) else float(np.std(vals, ddof=1))


@dataclass
class EvalReport:
    """Metric values per cell and seed.

    Each row is ``{"source", "target", "model", "metric", "values", "mean",
    "std", "status"}``; ``std`` is None with fewer than two seeds.
    """

    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, source, target, model, metric, values, status="ok"):
        vals = [float(v) for v in values]
        if status == "ok" and not all(math.isfinite(v) for v in vals):
            raise EvaluationError(f"non-finite {metric} for {model} on {source}->{target}")
        self.rows.append({
            "source": source, "target": target, "model": model, "metric": metric,
            "values": vals,
            "mean": float(np.mean(vals)) if vals and status == "ok" else None,
            "std": _sample_std(vals) if len(vals) >= 2 and status == "ok" else None,
            "status": status,
        })

    def cell(self, source, target, model) -> dict:
        for r in self.rows:
            if r["source"] == source and r["target"] == target and r["model"] == model:
                return r
        raise KeyError((source, target, model))

    def to_dict(self):
        return {"meta": self.meta, "rows": self.rows}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_table_csv(self, path, models: Sequence[str]):
        """One line per (source, target) with a ``mean ± std`` column per model."""
        pairs = list(dict.fromkeys((r["source"], r["target"]) for r in self.rows))
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_range", "target_range", *models])
            for src, tgt in pairs:
                line = [src, tgt]
                for m in models:
                    try:
                        r = self.cell(src, tgt, m)
                    except KeyError:
                        line.append("")
                        continue
                    if r["status"] != "ok":
                        line.append("failed")
                    elif r["std"] is None:
                        line.append(f"{r['mean']:.3f}")
                    else:
                        line.append(f"{r['mean']:.3f} ± {r['std']:.3f}")
                w.writerow(line)


# ---------------------------------------------------------------------- grid


def range_label(r) -> str:
    lo, hi = r
    fmt = lambda v: str(int(v)) if float(v).is_integer() else str(v)  # noqa: E731
    return f"({fmt(lo)}, {fmt(hi)})"


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from integers and strings."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.extend(p.encode("utf-8"))
            ints.append(0)
        else:
            ints.append(int(round(float(p) * 1000)) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass
class GridConfig:
    """Data and training settings shared by every grid cell."""

    base: SyntheticConfig = field(default_factory=SyntheticConfig)
    n_train: int = 4000
    model_params: dict = field(default_factory=dict)
    master_seed: int = 0
    metric: str = "mse"


def synthetic_split(rng_range, cfg: GridConfig, seed_index: int, role: str) -> DatasetSplit:
    """Dataset for one period range; data seed depends on range, seed index and role only."""
    lo, hi = rng_range
    sc = SyntheticConfig(**{**asdict(cfg.base), "p_min": lo, "p_max": hi,
                            "seed": derive_seed(cfg.master_seed, "data", role, lo, hi, seed_index)})
    series = generate_synthetic_dataset(sc)
    return split_synthetic(series, cfg.n_train, sc.tau_c, sc.tau_f, name=range_label(rng_range))


def _train_seed(cfg: GridConfig, model: str, source, seed_index: int) -> int:
    return derive_seed(cfg.master_seed, "train", model, *source, seed_index) % (2 ** 31)


def _load_manifest(path):
    done = {}
    if path is not None and Path(path).exists():
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                done[(rec["source"], rec["target"], rec["model"], rec["seed"])] = rec
    return done


def run_grid(source_ranges, target_ranges, models: Sequence[str], seeds: Sequence[int],
             cfg: GridConfig | None = None, manifest_path=None, jobs: int = 1,
             on_cell: Callable[[dict], None] | None = None) -> EvalReport:
    """Train on each source range and evaluate zero-shot on every other target range.

    Trained models depend only on (model, source range, seed), so every target
    reuses them. Completed ``(source, target, model, seed)`` cells are appended
    to ``manifest_path`` and skipped on a rerun. A cell whose training or
    evaluation raises is recorded as ``failed``.
    """
    cfg = cfg or GridConfig()
    pairs = [(s, t) for s in source_ranges for t in target_ranges if tuple(s) != tuple(t)]
    done = _load_manifest(manifest_path)

    def task(source, model, seed_index):
        pending = [t for s, t in pairs if tuple(s) == tuple(source)
                   and (range_label(s), range_label(t), model, seed_index) not in done]
        if not pending:
            return []
        recs = []
        try:
            src = synthetic_split(source, cfg, seed_index, "source")
            params = dict(cfg.model_params.get(model, {}))
            if model != "mean":
                params["seed"] = _train_seed(cfg, model, source, seed_index)
            est = make_forecaster(model, **params).fit(src)
        except Exception as exc:  # noqa: BLE001 - recorded as a failed cell
            logger.exception("training %s on %s failed", model, source)
            return [dict(source=range_label(source), target=range_label(t), model=model, seed=seed_index,
                         value=None, status="failed", error=str(exc)) for t in pending]
        for t in pending:
            try:
                tgt = synthetic_split(t, cfg, seed_index, "target")
                value = eval_mse(est, tgt) if cfg.metric == "mse" else eval_nd(est, tgt)
                recs.append(dict(source=range_label(source), target=range_label(t), model=model,
                                 seed=seed_index, value=value, status="ok"))
            except Exception as exc:  # noqa: BLE001
                logger.exception("evaluating %s on %s failed", model, t)
                recs.append(dict(source=range_label(source), target=range_label(t), model=model,
                                 seed=seed_index, value=None, status="failed", error=str(exc)))
        return recs

    tasks = [(s, m, i) for s in source_ranges for m in models for i in seeds]
    results = {}

    def record(recs):
        for rec in recs:
            key = (rec["source"], rec["target"], rec["model"], rec["seed"])
            results[key] = rec
            if manifest_path is not None and rec["status"] == "ok":
                with Path(manifest_path).open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if on_cell:
                on_cell(rec)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(lambda a: task(*a), tasks):
                record(recs)
    else:
        for a in tasks:
            record(task(*a))

    report = EvalReport(meta={"metric": cfg.metric, "models": list(models), "seeds": list(seeds),
                              "source_ranges": [list(r) for r in source_ranges],
                              "target_ranges": [list(r) for r in target_ranges],
                              "master_seed": cfg.master_seed, "n_cells": len(pairs) * len(models),
                              "n_training_runs": len(pairs) * len(models) * len(seeds)})
    for (s, t), m in itertools.product(pairs, models):
        recs = [done.get((range_label(s), range_label(t), m, i)) or results.get((range_label(s), range_label(t), m, i))
                for i in seeds]
        if any(r is None or r["status"] != "ok" for r in recs):
            report.add(range_label(s), range_label(t), m, cfg.metric, [], status="failed")
        else:
            report.add(range_label(s), range_label(t), m, cfg.metric, [r["value"] for r in recs])
    return report


# ------------------------------------------------------------------ real data


@dataclass
class RealDataset:
    name: str
    series: list[TimeSeries]
    tau_c: int
    tau_f: int


def run_real(target: RealDataset, sources: Sequence[RealDataset], models: Sequence[str],
             seeds: Sequence[int], model_params: dict | None = None, master_seed: int = 0) -> EvalReport:
    """Train on the union of ``sources`` and report zero-shot ND on ``target``."""
    model_params = model_params or {}
    src_splits = [split_real(d.series, d.tau_c, d.tau_f, name=d.name) for d in sources]
    tgt_split = split_real(target.series, target.tau_c, target.tau_f, name=target.name)
    source_label = "+".join(d.name for d in sources)
    report = EvalReport(meta={"metric": "nd", "target": target.name, "sources": [d.name for d in sources],
                              "models": list(models), "seeds": list(seeds)})
    for m in models:
        values = []
        for i in seeds:
            params = dict(model_params.get(m, {}))
            if m != "mean":
                params["seed"] = derive_seed(master_seed, "real", m, target.name, i) % (2 ** 31)
            est = make_forecaster(m, **params).fit(src_splits)
            values.append(eval_nd(est, tgt_split))
        report.add(source_label, target.name, m, "nd", values)
    return report


# ----------------------------------------------------------- invariance probes


def invariance_probe(dump_a, dump_b, source_range, period_scale: float = 120.0, seed: int = 0,
                     hidden=(64, 64), max_iter: int = 500) -> dict:
    """Fit a fresh MLP regressor from each representation to its normalized period.

    Each probe trains on rows whose period lies in ``source_range`` and is
    scored on all rows. ``dump_a``/``dump_b`` are ``(features, periods)``
    tuples or key-dump CSV paths. Returns train/test MSE per dump and the
    ratio ``test_a / test_b``.
    """
    from sklearn.neural_network import MLPRegressor
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    from .models import read_key_dump

    def load(d):
        return read_key_dump(d) if isinstance(d, (str, Path)) else (np.asarray(d[0]), np.asarray(d[1]))

    lo, hi = source_range
    out = {}
    for name, dump in (("a", dump_a), ("b", dump_b)):
        X, periods = load(dump)
        y = periods / period_scale
        train = (periods >= lo) & (periods <= hi)
        if train.sum() < 2:
            raise ContractError(f"probe {name}: fewer than two rows inside source range {source_range}")
        probe = make_pipeline(StandardScaler(), MLPRegressor(hidden_layer_sizes=hidden, max_iter=max_iter,
                                                             random_state=seed))
        probe.fit(X[train], y[train])
        out[name] = {"train_mse": mse(probe.predict(X[train]), y[train]),
                     "test_mse": mse(probe.predict(X), y), "n_train": int(train.sum()), "n_test": len(y)}
    out["ratio"] = out["a"]["test_mse"] / max(out["b"]["test_mse"], 1e-300)
    return out


def forecast_period_check(model: BaseForecaster, split: DatasetSplit, horizon: int | None = None,
                          tolerance_bins: int = 1) -> dict:
    """Fraction of test windows whose forecast has the target's dominant DFT bin (within tolerance).

    Forecasts with no spectral content (e.g. constant) never agree. If the
    horizon is shorter than 1.5 dominant periods of the contexts the tolerance
    is widened by one bin and a warning is logged.
    """
    _check_test(split)
    horizon = horizon or split.tau_f
    ctx, tgt, _, _ = stack_windows(split.test)
    if horizon != tgt.shape[1]:
        raise ContractError("period check needs forecasts as long as the test targets")
    ctx_period = np.median(ctx.shape[1] / dominant_bin(ctx))
    if horizon < 1.5 * ctx_period:
        logger.warning("horizon %d is shorter than 1.5 periods (~%.1f); widening tolerance", horizon, ctx_period)
        tolerance_bins += 1
    pred = model.forecast_scaled(ctx, horizon)
    flat = dft_magnitudes(pred).max(axis=-1) <= 1e-9 * np.maximum(np.abs(pred).max(axis=-1), 1.0)
    agree = (np.abs(dominant_bin(pred) - dominant_bin(tgt)) <= tolerance_bins) & ~flat
    return {"agreement": float(agree.mean()), "n_windows": int(len(agree)),
            "tolerance_bins": tolerance_bins, "horizon": int(horizon)}

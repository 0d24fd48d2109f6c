"""Run configuration: one JSON document per command, validated before anything runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import FREQ_DEFAULTS, SyntheticConfig
from .estimators import make_forecaster
from .exceptions import ConfigError
from .training import TrainConfig


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config: top level must be a JSON object")
    return obj


def _take(obj: dict, allowed: set, where: str) -> dict:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    return obj


def _int(obj, key, where, default=None, minimum=None):
    v = obj.get(key, default)
    if v is None:
        raise ConfigError(f"{where}.{key}: required")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {v}")
    return v


def _range(v, where):
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v)):
        raise ConfigError(f"{where}: expected [p_min, p_max], got {v!r}")
    lo, hi = float(v[0]), float(v[1])
    if not 0 < lo <= hi:
        raise ConfigError(f"{where}: need 0 < p_min <= p_max, got {v!r}")
    return (lo, hi)


def parse_ranges(text: str):
    """``"10:15,15:20"`` -> ``[(10.0, 15.0), (15.0, 20.0)]``."""
    out = []
    for part in text.split(","):
        try:
            lo, hi = part.split(":")
            out.append(_range([float(lo), float(hi)], "--ranges"))
        except ValueError as exc:
            raise ConfigError(f"--ranges: cannot parse {part!r}") from exc
    return out


def synthetic_config(obj: dict | None, where="synthetic", seed=None) -> SyntheticConfig:
    obj = dict(obj or {})
    names = {f.name for f in fields(SyntheticConfig)}
    _take(obj, names, where)
    if seed is not None:
        obj["seed"] = seed
    for key in ("n_series", "tau_c", "tau_f", "seed"):
        if key in obj:
            _int(obj, key, where, minimum=0)
    for key in ("p_min", "p_max", "amp_min", "amp_max", "noise_sigma"):
        if key in obj and (isinstance(obj[key], bool) or not isinstance(obj[key], (int, float))):
            raise ConfigError(f"{where}.{key}: expected a number")
    cfg = SyntheticConfig(**obj)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{where}.{exc}") from exc
    return cfg


@dataclass
class DatasetRef:
    path: Path
    name: str
    kind: str = "real"
    tau_c: int | None = None
    tau_f: int | None = None


def dataset_ref(obj, where) -> DatasetRef:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    _take(obj, {"path", "name", "kind", "tau_c", "tau_f", "freq"}, where)
    if "path" not in obj:
        raise ConfigError(f"{where}.path: required")
    path = Path(obj["path"])
    if not path.exists():
        raise ConfigError(f"{where}.path: file not found: {path}")
    kind = obj.get("kind", "real")
    if kind not in ("real", "synthetic"):
        raise ConfigError(f"{where}.kind: expected 'real' or 'synthetic', got {kind!r}")
    tau_c, tau_f = obj.get("tau_c"), obj.get("tau_f")
    freq = obj.get("freq")
    if (tau_c is None or tau_f is None) and freq is not None:
        if freq not in FREQ_DEFAULTS:
            raise ConfigError(f"{where}.freq: unknown frequency tag {freq!r}")
        tau_c = tau_c if tau_c is not None else FREQ_DEFAULTS[freq][0]
        tau_f = tau_f if tau_f is not None else FREQ_DEFAULTS[freq][1]
    for key, v in (("tau_c", tau_c), ("tau_f", tau_f)):
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
            raise ConfigError(f"{where}.{key}: must be a positive integer")
    return DatasetRef(path=path, name=obj.get("name", path.stem), kind=kind, tau_c=tau_c, tau_f=tau_f)


@dataclass
class SynthRun:
    synthetic: SyntheticConfig
    n_train: int
    name: str
    output_dir: Path


def synth_run(obj: dict, out=None, seed=None) -> SynthRun:
    _take(obj, {"command", "synthetic", "n_train", "name", "output_dir", "seed"}, "config")
    if seed is None and "seed" in obj:
        seed = _int(obj, "seed", "config", minimum=0)
    syn = synthetic_config(obj.get("synthetic"), seed=seed)
    n_train = _int(obj, "n_train", "config", default=int(syn.n_series * 0.8))
    if not 0 <= n_train <= syn.n_series:
        raise ConfigError(f"config.n_train: must lie in [0, {syn.n_series}], got {n_train}")
    return SynthRun(syn, n_train, obj.get("name", f"synthetic-{syn.p_min:g}-{syn.p_max:g}"),
                    _output_dir(obj, out))


@dataclass
class TrainRun:
    model: str
    params: dict
    sources: list[DatasetRef]
    output_dir: Path
    resume: Path | None = None


def train_run(obj: dict, out=None, seed=None, resume=None) -> TrainRun:
    _take(obj, {"command", "model", "params", "sources", "output_dir", "seed", "resume"}, "config")
    model = obj.get("model")
    if model is None:
        raise ConfigError("config.model: required")
    params = dict(obj.get("params", {}))
    if seed is None and "seed" in obj:
        seed = _int(obj, "seed", "config", minimum=0)
    if seed is not None and model != "mean":
        params["seed"] = seed
    est = make_forecaster(model, **params)
    if model != "mean":
        try:
            est._train_config().validate()
        except ConfigError as exc:
            raise ConfigError(f"config.params.{exc}") from exc
    srcs = obj.get("sources")
    if not isinstance(srcs, list) or not srcs:
        raise ConfigError("config.sources: need a non-empty list of datasets")
    sources = [dataset_ref(s, f"config.sources[{i}]") for i, s in enumerate(srcs)]
    resume = resume or obj.get("resume")
    if resume is not None and not Path(resume).exists():
        raise ConfigError(f"config.resume: checkpoint not found: {resume}")
    return TrainRun(model, params, sources, _output_dir(obj, out), Path(resume) if resume else None)


@dataclass
class EvalRun:
    checkpoint: Path
    target: DatasetRef
    metrics: list[str]
    output_dir: Path
    dump_keys: bool = False


def eval_run(obj: dict, out=None, dump_keys=False) -> EvalRun:
    _take(obj, {"command", "checkpoint", "target", "metrics", "output_dir", "dump_keys"}, "config")
    if "checkpoint" not in obj:
        raise ConfigError("config.checkpoint: required")
    metrics = obj.get("metrics", ["mse", "nd"])
    if not metrics or any(m not in ("mse", "nd") for m in metrics):
        raise ConfigError(f"config.metrics: choose from 'mse', 'nd'; got {metrics!r}")
    target = dataset_ref(obj.get("target"), "config.target")
    return EvalRun(Path(obj["checkpoint"]), target, list(metrics), _output_dir(obj, out),
                   bool(dump_keys or obj.get("dump_keys", False)))


DEFAULT_RANGES = [(10.0, 15.0), (15.0, 20.0), (20.0, 25.0), (25.0, 30.0)]


@dataclass
class GridRun:
    source_ranges: list
    target_ranges: list
    models: list[str]
    seeds: list[int]
    synthetic: SyntheticConfig
    n_train: int
    model_params: dict
    master_seed: int
    metric: str
    output_dir: Path
    extra: dict = field(default_factory=dict)


def grid_run(obj: dict, out=None, seed=None, ranges=None) -> GridRun:
    _take(obj, {"command", "source_ranges", "target_ranges", "models", "seeds", "synthetic", "n_train",
                "model_params", "master_seed", "metric", "output_dir"}, "config")
    if ranges is not None:
        src = tgt = ranges
    else:
        src = [_range(r, f"config.source_ranges[{i}]") for i, r in enumerate(obj.get("source_ranges", DEFAULT_RANGES))]
        tgt = [_range(r, f"config.target_ranges[{i}]")
               for i, r in enumerate(obj.get("target_ranges", [list(r) for r in src]))]
    models = obj.get("models", ["mean", "cfa", "lstm"])
    model_params = obj.get("model_params", {})
    if not isinstance(model_params, dict):
        raise ConfigError("config.model_params: expected an object keyed by model name")
    for m in models:
        make_forecaster(m, **model_params.get(m, {}))
    seeds = obj.get("seeds", [0, 1, 2])
    if not seeds or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError("config.seeds: need a non-empty list of non-negative integers")
    syn = synthetic_config(obj.get("synthetic"))
    for r in src + tgt:
        if r[1] > syn.tau_c:
            raise ConfigError(f"config.source_ranges: period range {r} exceeds tau_c={syn.tau_c}")
    n_train = _int(obj, "n_train", "config", default=int(syn.n_series * 0.8), minimum=1)
    if n_train >= syn.n_series:
        raise ConfigError("config.n_train: must be smaller than synthetic.n_series")
    master_seed = seed if seed is not None else _int(obj, "master_seed", "config", default=0, minimum=0)
    metric = obj.get("metric", "mse")
    if metric not in ("mse", "nd"):
        raise ConfigError(f"config.metric: expected 'mse' or 'nd', got {metric!r}")
    return GridRun(src, tgt, list(models), list(seeds), syn, n_train, model_params, master_seed, metric,
                   _output_dir(obj, out))


@dataclass
class ProbeRun:
    dump_a: Path
    dump_b: Path
    source_range: tuple
    period_scale: float
    output_dir: Path
    seed: int = 0


def probe_run(obj: dict, out=None, seed=None) -> ProbeRun:
    _take(obj, {"command", "dump_a", "dump_b", "source_range", "period_scale", "output_dir", "seed"}, "config")
    paths = []
    for key in ("dump_a", "dump_b"):
        if key not in obj:
            raise ConfigError(f"config.{key}: required")
        p = Path(obj[key])
        if not p.exists():
            raise ConfigError(f"config.{key}: file not found: {p}")
        paths.append(p)
    if "source_range" not in obj:
        raise ConfigError("config.source_range: required")
    rng = _range(obj["source_range"], "config.source_range")
    scale = obj.get("period_scale", 120.0)
    if isinstance(scale, bool) or not isinstance(scale, (int, float)) or scale <= 0:
        raise ConfigError("config.period_scale: must be a positive number")
    s = seed if seed is not None else _int(obj, "seed", "config", default=0, minimum=0)
    return ProbeRun(paths[0], paths[1], rng, float(scale), _output_dir(obj, out), s)


def _output_dir(obj, out) -> Path:
    d = out or obj.get("output_dir")
    if d is None:
        raise ConfigError("config.output_dir: required (or pass --out)")
    return Path(d)


def train_config_for(params: dict, model: str) -> TrainConfig:
    return make_forecaster(model, **params)._train_config()

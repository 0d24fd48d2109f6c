"""Series and window types, synthetic seasonal data, splitting, sampling and scaling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, ContractError, DatasetError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6

# (context length, forecast length, nominal period) per frequency tag
FREQ_DEFAULTS = {
    "H": (120, 24, 24),
    "D": (35, 7, 7),
    "M": (36, 12, 12),
    "Q": (12, 4, 4),
}


@dataclass
class TimeSeries:
    id: str
    freq_tag: str
    values: np.ndarray
    start: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size == 0:
            raise ContractError(f"series {self.id!r} is empty")
        if not np.all(np.isfinite(self.values)):
            raise ContractError(f"series {self.id!r} contains non-finite values")

    def __len__(self):
        return self.values.size


@dataclass
class WindowSample:
    """A scaled context window and its unscaled forecast target."""

    context: np.ndarray
    target: np.ndarray
    scale_mean: float
    scale_std: float
    series_id: str = ""

    def __post_init__(self):
        self.context = np.asarray(self.context, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.context.size == 0 or self.target.size == 0:
            raise ContractError("context and target must be non-empty")
        if not self.scale_std > 0:
            raise ContractError("scale_std must be strictly positive")
        if not (np.all(np.isfinite(self.context)) and np.all(np.isfinite(self.target))):
            raise ContractError("window contains non-finite values")

    @property
    def scaled_target(self) -> np.ndarray:
        return (self.target - self.scale_mean) / self.scale_std

    @property
    def raw_context(self) -> np.ndarray:
        return self.context * self.scale_std + self.scale_mean


@dataclass
class SyntheticConfig:
    p_min: float = 15.0
    p_max: float = 20.0
    amp_min: float = 0.5
    amp_max: float = 2.0
    noise_sigma: float = 0.2
    n_series: int = 5000
    tau_c: int = 120
    tau_f: int = 24
    seed: int = 0
    # Fixes the phase of every series; None draws it uniformly.
    phase: float | None = None

    def validate(self):
        if not (0 < self.p_min <= self.p_max <= self.tau_c):
            raise ConfigError(
                f"p_min/p_max: need 0 < p_min <= p_max <= tau_c, got "
                f"{self.p_min}, {self.p_max}, tau_c={self.tau_c}"
            )
        if self.amp_min > self.amp_max:
            raise ConfigError("amp_min: must not exceed amp_max")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma: must be >= 0")
        if self.n_series < 1:
            raise ConfigError("n_series: must be >= 1")
        if self.tau_c < 1 or self.tau_f < 1:
            raise ConfigError("tau_c/tau_f: must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        return self


@dataclass
class DatasetSplit:
    """Training regions plus held-out test windows for one dataset."""

    train: list[TimeSeries]
    test: list[WindowSample]
    tau_c: int
    tau_f: int
    freq_tag: str = "synthetic"
    name: str = ""
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._starts = None

    @property
    def metadata(self) -> dict:
        return {
            "name": self.name,
            "freq_tag": self.freq_tag,
            "tau_c": self.tau_c,
            "tau_f": self.tau_f,
            "n_train_series": len(self.train),
            "n_test": len(self.test),
            "n_skipped": len(self.skipped),
        }

    def valid_starts(self) -> np.ndarray:
        """Number of valid window start positions per training series."""
        if self._starts is None:
            w = self.tau_c + self.tau_f
            self._starts = np.array(
                [max(len(s) - w + 1, 0) for s in self.train], dtype=np.int64
            )
        return self._starts

    @property
    def n_valid_windows(self) -> int:
        return int(self.valid_starts().sum())


# ---------------------------------------------------------------- generation


def _series_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, index]))


def generate_synthetic_dataset(cfg: SyntheticConfig, prefix: str = "syn") -> list[TimeSeries]:
    """Noisy sine series of length ``tau_c + tau_f``.

    Each series draws phase, period, amplitude and noise from its own RNG
    stream seeded by ``(cfg.seed, index)``, so the output does not depend on
    generation order.
    """
    cfg.validate()
    length = cfg.tau_c + cfg.tau_f
    t = np.arange(length, dtype=np.float64)
    out = []
    for i in range(cfg.n_series):
        rng = _series_rng(cfg.seed, i)
        phase = rng.uniform(0.0, 2 * np.pi)
        period = rng.uniform(cfg.p_min, cfg.p_max)
        amp = rng.uniform(cfg.amp_min, cfg.amp_max)
        noise = rng.normal(0.0, 1.0, size=length) * cfg.noise_sigma
        if cfg.phase is not None:
            phase = cfg.phase
        values = amp * np.sin(2 * np.pi * t / period + phase) + noise
        out.append(TimeSeries(id=f"{prefix}-{i}", freq_tag="synthetic", values=values))
    return out


def synthetic_periods(cfg: SyntheticConfig) -> np.ndarray:
    """The period drawn for each series by :func:`generate_synthetic_dataset`."""
    cfg.validate()
    periods = np.empty(cfg.n_series)
    for i in range(cfg.n_series):
        rng = _series_rng(cfg.seed, i)
        rng.uniform(0.0, 2 * np.pi)
        periods[i] = rng.uniform(cfg.p_min, cfg.p_max)
    return periods


def generate_seasonal_panel(
    freq_tag: str,
    n_series: int,
    length: int,
    seed: int = 0,
    period: int | None = None,
    noise: float = 0.1,
) -> list[TimeSeries]:
    """Positive-valued seasonal series standing in for a real dataset of one frequency.

    Level, trend, seasonal amplitude/shape and noise vary per series.
    """
    if period is None:
        if freq_tag not in FREQ_DEFAULTS:
            raise ConfigError(f"freq_tag: unknown tag {freq_tag!r}")
        period = FREQ_DEFAULTS[freq_tag][2]
    t = np.arange(length, dtype=np.float64)
    out = []
    for i in range(n_series):
        rng = _series_rng(seed, i)
        level = rng.uniform(5.0, 20.0)
        amp = rng.uniform(0.2, 0.5) * level
        phase = rng.uniform(0, 2 * np.pi)
        harm = rng.uniform(0.0, 0.3)
        trend = rng.normal(0.0, 0.002) * level
        season = np.sin(2 * np.pi * t / period + phase) + harm * np.sin(4 * np.pi * t / period + 2 * phase)
        eps = rng.normal(0.0, noise * amp, size=length)
        values = level + trend * t + amp * season + eps
        out.append(TimeSeries(id=f"{freq_tag}-{i}", freq_tag=freq_tag, values=values))
    return out


# ------------------------------------------------------------------- scaling


def scale_window(raw_context, raw_target, series_id: str = "") -> WindowSample:
    raw_context = np.asarray(raw_context, dtype=np.float64)
    if not np.all(np.isfinite(raw_context)):
        raise ContractError("context contains non-finite values")
    mean = float(raw_context.mean())
    std = max(float(raw_context.std()), STD_FLOOR)
    return WindowSample(
        context=(raw_context - mean) / std,
        target=np.asarray(raw_target, dtype=np.float64),
        scale_mean=mean,
        scale_std=std,
        series_id=series_id,
    )


def scale_contexts(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise version of :func:`scale_window` on a 2-D array of contexts."""
    mean = raw.mean(axis=-1, keepdims=True)
    std = np.maximum(raw.std(axis=-1, keepdims=True), STD_FLOOR)
    return (raw - mean) / std, mean, std


def unscale_forecast(scaled_forecast, sample: WindowSample) -> np.ndarray:
    scaled_forecast = np.asarray(scaled_forecast, dtype=np.float64)
    if scaled_forecast.shape != sample.target.shape:
        raise ContractError(
            f"forecast length {scaled_forecast.shape} does not match target {sample.target.shape}"
        )
    return scaled_forecast * sample.scale_std + sample.scale_mean


# ----------------------------------------------------------------- splitting


def split_synthetic(series: Sequence[TimeSeries], n_train: int, tau_c: int, tau_f: int,
                    name: str = "") -> DatasetSplit:
    if not 0 < n_train < len(series):
        raise ConfigError(f"n_train: need 0 < n_train < {len(series)}, got {n_train}")
    for s in series:
        if len(s) != tau_c + tau_f:
            raise ConfigError(f"series {s.id!r} has length {len(s)}, expected {tau_c + tau_f}")
    test = [scale_window(s.values[:tau_c], s.values[tau_c:], s.id) for s in series[n_train:]]
    return DatasetSplit(train=list(series[:n_train]), test=test, tau_c=tau_c, tau_f=tau_f,
                        freq_tag=series[0].freq_tag, name=name)


def split_real(series: Sequence[TimeSeries], tau_c: int, tau_f: int, name: str = "") -> DatasetSplit:
    """Hold out the last ``tau_f`` values of every series as its test window."""
    train, test, skipped = [], [], []
    for s in series:
        n = len(s)
        if n < tau_c + tau_f:
            skipped.append(s.id)
            continue
        test.append(scale_window(s.values[n - tau_f - tau_c:n - tau_f], s.values[n - tau_f:], s.id))
        train.append(TimeSeries(id=s.id, freq_tag=s.freq_tag, values=s.values[:n - tau_f], start=s.start))
    if skipped:
        logger.warning("%s: skipped %d series shorter than %d", name or "dataset", len(skipped), tau_c + tau_f)
    freq = series[0].freq_tag if series else ""
    return DatasetSplit(train=train, test=test, tau_c=tau_c, tau_f=tau_f, freq_tag=freq,
                        name=name, skipped=skipped)


# ------------------------------------------------------------------ sampling


def n_batches_per_epoch(splits: Sequence[DatasetSplit], batch_size: int) -> int:
    """One pass over the largest source's window positions, in expectation."""
    return max(math.ceil(s.n_valid_windows / batch_size) for s in splits)


def sample_window_arrays(split: DatasetSplit, batch_size: int, rng: np.random.Generator):
    """Draw ``batch_size`` training windows; returns ``(context, target, series_idx, start)``.

    Sampling a flat position uniformly over all valid window starts is the same
    as choosing a series proportional to its number of starts and then a
    uniform start inside it.
    """
    counts = split.valid_starts()
    total = int(counts.sum())
    if total == 0:
        raise DatasetError(f"{split.name or 'dataset'}: no training series long enough for a window")
    flat = rng.integers(0, total, size=batch_size)
    offsets = np.cumsum(counts)
    idx = np.searchsorted(offsets, flat, side="right")
    starts = flat - (offsets[idx] - counts[idx])
    w = split.tau_c + split.tau_f
    windows = np.stack([split.train[i].values[s:s + w] for i, s in zip(idx, starts)])
    return windows[:, :split.tau_c], windows[:, split.tau_c:], idx, starts


def sample_training_batch(split: DatasetSplit, batch_size: int, rng: np.random.Generator) -> list[WindowSample]:
    ctx, tgt, idx, _ = sample_window_arrays(split, batch_size, rng)
    return [scale_window(c, y, split.train[i].id) for c, y, i in zip(ctx, tgt, idx)]


def stack_windows(samples: Sequence[WindowSample]):
    """Stack scaled contexts, scaled targets and scale statistics of equal-length windows."""
    ctx = np.stack([s.context for s in samples])
    tgt = np.stack([s.scaled_target for s in samples])
    mean = np.array([s.scale_mean for s in samples])
    std = np.array([s.scale_std for s in samples])
    return ctx, tgt, mean, std


# ----------------------------------------------------------------------- I/O


def write_jsonl(series: Iterable[TimeSeries], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for s in series:
            obj = {"id": s.id, "freq": s.freq_tag}
            if s.start is not None:
                obj["start"] = s.start
            obj["target"] = [float(v) for v in s.values]
            fh.write(json.dumps(obj) + "\n")


def read_jsonl(path) -> list[TimeSeries]:
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(TimeSeries(id=str(obj["id"]), freq_tag=str(obj["freq"]),
                                      values=obj["target"], start=obj.get("start")))
            except (KeyError, ValueError, TypeError, ContractError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed series record ({exc})") from exc
    return out

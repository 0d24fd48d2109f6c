"""Multi-source training loops.

``train_cfa`` alternates a generative update (forecast loss minus the
weighted discriminator loss, discriminator frozen) with a discriminative
update (period-regression loss, encoder frozen), drawing one batch per
source per iteration. ``train_baseline`` runs the same batch schedule with
the forecast loss alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from . import nnet
from .data import DatasetSplit, n_batches_per_epoch, sample_window_arrays, scale_contexts, stack_windows
from .exceptions import ConfigError, TrainingFault
from .models import CFANet, ForecastNet
from .spectral import domain_labels

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 1.0
    epochs: int = 10
    n_batches_per_epoch: int | str = "auto"
    # Upper bound applied to the "auto" batch count; None means no bound.
    max_batches_per_epoch: int | None = None
    batch_size: int = 64
    lr: float = 1e-3
    lr_disc: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    k: int = 1

    def validate(self):
        if not self.lam >= 0:
            raise ConfigError("lam: must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs: must be >= 1")
        if self.n_batches_per_epoch != "auto" and (
                not isinstance(self.n_batches_per_epoch, int) or self.n_batches_per_epoch < 1):
            raise ConfigError("n_batches_per_epoch: must be 'auto' or a positive integer")
        if self.max_batches_per_epoch is not None and self.max_batches_per_epoch < 1:
            raise ConfigError("max_batches_per_epoch: must be positive")
        if self.lr <= 0 or self.lr_disc <= 0:
            raise ConfigError("lr/lr_disc: must be positive")
        if self.k < 1:
            raise ConfigError("k: must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")
        return self

    def batches_per_epoch(self, sources: Sequence[DatasetSplit]) -> int:
        if self.n_batches_per_epoch != "auto":
            return int(self.n_batches_per_epoch)
        n = n_batches_per_epoch(sources, self.batch_size)
        if self.max_batches_per_epoch is not None:
            n = min(n, self.max_batches_per_epoch)
        return n

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def _dtype(model):
    return next(model.parameters()).dtype


def draw_batch(split: DatasetSplit, cfg: TrainConfig, rng: np.random.Generator, dtype, k=None):
    """Scaled ``(context, target, labels)`` tensors for one training batch."""
    ctx, tgt, _, _ = sample_window_arrays(split, cfg.batch_size, rng)
    ctx_s, mean, std = scale_contexts(ctx)
    tgt_s = (tgt - mean) / std
    labels = domain_labels(ctx_s, k or cfg.k)
    as_t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
    return as_t(ctx_s), as_t(tgt_s), as_t(labels)


def _freeze(params, frozen: bool):
    for p in params:
        p.requires_grad_(not frozen)


def _check_finite(value, epoch, it, source, **losses):
    if not math.isfinite(value):
        detail = ", ".join(f"{k}={v:.6g}" for k, v in losses.items())
        raise TrainingFault(f"non-finite loss at epoch {epoch}, iteration {it}, source {source!r}: {detail}")


def _source_names(sources):
    names = []
    for i, s in enumerate(sources):
        name = s.name or f"source{i}"
        names.append(name if name not in names else f"{name}#{i}")
    return names


def _summarize(acc, names, n):
    return {name: {key: (None if vals[name] is None else vals[name] / n) for key, vals in acc.items()}
            for name in names}


def train_cfa(model: CFANet, sources: Sequence[DatasetSplit], cfg: TrainConfig, log_every: int = 0):
    """Adversarial multi-source training; returns the per-epoch loss history."""
    cfg.validate()
    if not sources:
        raise ConfigError("sources: need at least one training source")
    if model.k != cfg.k:
        raise ConfigError(f"k: model predicts {model.k} periods but config asks for {cfg.k}")
    groups = model.param_groups()
    gen_params = list(groups[nnet.GENERATIVE].values())
    dis_params = list(groups[nnet.DISCRIMINATIVE].values())
    opt_g = nnet.make_optimizer(gen_params, cfg.lr, cfg.betas, cfg.eps)
    opt_d = nnet.make_optimizer(dis_params, cfg.lr_disc, cfg.betas, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    dtype = _dtype(model)
    names = _source_names(sources)
    n_batches = cfg.batches_per_epoch(sources)
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        acc = {key: {n: 0.0 for n in names} for key in ("generative_loss", "forecast_loss", "discriminator_loss")}
        for it in range(n_batches):
            batches = [draw_batch(s, cfg, rng, dtype) for s in sources]

            # generative update, discriminator frozen
            _freeze(dis_params, True)
            opt_g.zero_grad(set_to_none=True)
            total = 0.0
            for name, (ctx, tgt, lab) in zip(names, batches):
                pred, K, Q = model.teacher_forced(ctx, tgt)
                lf = nnet.mse_loss(pred, tgt)
                if cfg.lam > 0:
                    ld = nnet.mse_loss(model.discriminate(K, Q), lab)
                    lj = lf - cfg.lam * ld
                else:
                    lj = lf
                _check_finite(lj.item(), epoch, it, name, forecast=lf.item())
                acc["generative_loss"][name] += lj.item()
                acc["forecast_loss"][name] += lf.item()
                total = total + lj
            total.backward()
            opt_g.step()
            _freeze(dis_params, False)

            # discriminative update, encoder frozen
            opt_d.zero_grad(set_to_none=True)
            total = 0.0
            for name, (ctx, _, lab) in zip(names, batches):
                with torch.no_grad():
                    K, Q = model.context_keys(ctx)
                ld = nnet.mse_loss(model.discriminate(K, Q), lab)
                _check_finite(ld.item(), epoch, it, name, discriminator=ld.item())
                acc["discriminator_loss"][name] += ld.item()
                total = total + ld
            total.backward()
            opt_d.step()
            for p in gen_params:
                p.grad = None
        history.append({"epoch": epoch, "sources": _summarize(acc, names, n_batches)})
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d %s", epoch, history[-1]["sources"])
    model.eval()
    return history


def train_baseline(model: ForecastNet | None, sources: Sequence[DatasetSplit], cfg: TrainConfig,
                   log_every: int = 0):
    """Forecast-loss-only training on the same batch schedule; ``None`` (mean model) is a no-op."""
    cfg.validate()
    if not sources:
        raise ConfigError("sources: need at least one training source")
    if model is None:
        return []
    groups = model.param_groups()
    gen_params = list(groups[nnet.GENERATIVE].values())
    opt = nnet.make_optimizer(gen_params, cfg.lr, cfg.betas, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    dtype = _dtype(model)
    names = _source_names(sources)
    n_batches = cfg.batches_per_epoch(sources)
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        acc = {"generative_loss": {n: 0.0 for n in names}, "forecast_loss": {n: 0.0 for n in names},
               "discriminator_loss": {n: None for n in names}}
        for it in range(n_batches):
            batches = [draw_batch(s, cfg, rng, dtype) for s in sources]
            opt.zero_grad(set_to_none=True)
            total = 0.0
            for name, (ctx, tgt, _) in zip(names, batches):
                pred, _, _ = model.teacher_forced(ctx, tgt)
                lf = nnet.mse_loss(pred, tgt)
                _check_finite(lf.item(), epoch, it, name, forecast=lf.item())
                acc["generative_loss"][name] += lf.item()
                acc["forecast_loss"][name] += lf.item()
                total = total + lf
            total.backward()
            opt.step()
        history.append({"epoch": epoch, "sources": _summarize(acc, names, n_batches)})
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d %s", epoch, history[-1]["sources"])
    model.eval()
    return history


def teacher_forced_loss(model: ForecastNet, batch) -> torch.Tensor:
    """MSE on scaled targets of teacher-forced predictions, averaged over batch and horizon."""
    ctx, tgt, _, _ = stack_windows(batch)
    dtype = _dtype(model)
    pred, _, _ = model.teacher_forced(torch.as_tensor(ctx, dtype=dtype), torch.as_tensor(tgt, dtype=dtype))
    return nnet.mse_loss(pred, torch.as_tensor(tgt, dtype=dtype))

"""scikit-learn style forecasters wrapping the networks.

``fit`` takes one or more :class:`~cfa_forecast.data.DatasetSplit` sources;
``predict`` takes raw (unscaled) contexts and returns unscaled forecasts;
``transform`` returns a fixed-size representation per context (pooled keys
for the attention model, final hidden state for the LSTM).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nnet
from .data import scale_contexts
from .exceptions import ConfigError, ContractError
from .models import CFANet, LSTMNet, mean_forecast
from .training import TrainConfig, train_baseline, train_cfa
from .validation import check_contexts, check_horizon, check_sources, group_by_length

_DTYPES = {"float32": torch.float32, "float64": torch.float64}

# Chunk size for batched inference.
_INFER_BATCH = 512


class BaseForecaster(BaseEstimator):
    model_name = ""

    def predict(self, X, horizon):
        """Forecast ``horizon`` steps after each raw context in ``X``."""
        horizon = check_horizon(horizon)
        rows = check_contexts(X, self._min_context())
        out = np.empty((len(rows), horizon))
        for _, idx in group_by_length(rows).items():
            raw = np.stack([rows[i] for i in idx])
            scaled, mean, std = scale_contexts(raw)
            out[idx] = self.forecast_scaled(scaled, horizon) * std + mean
        return out

    def forecast_scaled(self, contexts, horizon) -> np.ndarray:
        """Forecast from already-scaled, equal-length contexts ``[n, tau_c]``."""
        raise NotImplementedError

    def _min_context(self):
        return 1

    def _more_tags(self):
        return {"requires_fit": self.model_name != "mean"}


class MeanForecaster(BaseForecaster):
    """Repeats the context mean over the horizon."""

    model_name = "mean"

    def fit(self, sources=None, y=None):
        self.n_sources_ = 0 if sources is None else len(check_sources(sources))
        self.history_ = []
        return self

    def forecast_scaled(self, contexts, horizon):
        return mean_forecast(np.atleast_2d(contexts), check_horizon(horizon))

    def transform(self, X):
        rows = check_contexts(X)
        return np.array([[r.mean()] for r in rows])


class _NetForecaster(BaseForecaster):
    """Shared fit/predict plumbing for the torch-backed forecasters."""

    def _train_config(self):
        return TrainConfig(lam=getattr(self, "lam", 0.0), epochs=self.epochs,
                           n_batches_per_epoch=self.n_batches_per_epoch,
                           max_batches_per_epoch=self.max_batches_per_epoch,
                           batch_size=self.batch_size, lr=self.lr,
                           lr_disc=getattr(self, "lr_disc", self.lr), seed=self.seed,
                           k=getattr(self, "k", 1))

    def _torch_dtype(self):
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype: expected one of {sorted(_DTYPES)}, got {self.dtype!r}")
        return _DTYPES[self.dtype]

    def fit(self, sources, y=None):
        sources = check_sources(sources)
        cfg = self._train_config().validate()
        if not (self.warm_start and hasattr(self, "net_")):
            self.net_ = self._build_net()
            self.history_ = []
        self.history_ = self.history_ + self._train(sources, cfg)
        self.train_config_ = cfg
        return self

    def _require_net(self):
        check_is_fitted(self, "net_")
        return self.net_

    def forecast_scaled(self, contexts, horizon):
        net = self._require_net()
        horizon = check_horizon(horizon)
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        dtype = next(net.parameters()).dtype
        chunks = []
        with torch.no_grad():
            for i in range(0, len(contexts), _INFER_BATCH):
                c = torch.as_tensor(contexts[i:i + _INFER_BATCH], dtype=dtype)
                chunks.append(net.forecast(c, horizon).double().numpy())
        out = np.concatenate(chunks)
        if not np.all(np.isfinite(out)):
            raise ContractError("model produced non-finite forecasts")
        return out

    def transform(self, X):
        """Representation of each raw context (contexts are scaled first)."""
        net = self._require_net()
        rows = check_contexts(X, self._min_context())
        dtype = next(net.parameters()).dtype
        out = [None] * len(rows)
        with torch.no_grad():
            for _, idx in group_by_length(rows).items():
                scaled, _, _ = scale_contexts(np.stack([rows[i] for i in idx]))
                rep = net.representation(torch.as_tensor(scaled, dtype=dtype)).double().numpy()
                for j, i in enumerate(idx):
                    out[i] = rep[j]
        return np.stack(out)

    def architecture(self) -> dict:
        """Parameters that determine the network's shapes."""
        return {k: v for k, v in self.get_params().items() if k in self._arch_keys}


class CFAForecaster(_NetForecaster):
    """Attention forecaster trained adversarially against a period discriminator.

    Parameters
    ----------
    d_model, n_heads, n_conv_layers, kernel_size, hidden, disc_hidden : int
        Architecture sizes; ``hidden`` is the width of the encoder and decoder MLPs.
    k : int
        Number of dominant periods the discriminator regresses (1 for single
        tones, 2 for real seasonal data).
    lam : float
        Weight of the discriminator loss subtracted from the forecast loss.
    adversarial : bool
        If False the discriminator is neither trained nor used; the network
        is fit on the forecast loss alone.
    epochs, batch_size, n_batches_per_epoch, max_batches_per_epoch, lr, lr_disc
        Training schedule. ``n_batches_per_epoch="auto"`` covers every
        training window once per epoch in expectation.
    seed : int
        Seeds both the initialization and the batch sampler.
    """

    model_name = "cfa"
    _arch_keys = ("d_model", "n_heads", "n_conv_layers", "kernel_size", "hidden", "disc_hidden", "k", "dtype")

    def __init__(self, d_model=64, n_heads=4, n_conv_layers=3, kernel_size=3, hidden=64,
                 disc_hidden=64, k=1, lam=1.0, adversarial=True, epochs=10, batch_size=64,
                 n_batches_per_epoch="auto", max_batches_per_epoch=None, lr=1e-3, lr_disc=1e-3,
                 seed=0, dtype="float32", warm_start=False):
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_conv_layers = n_conv_layers
        self.kernel_size = kernel_size
        self.hidden = hidden
        self.disc_hidden = disc_hidden
        self.k = k
        self.lam = lam
        self.adversarial = adversarial
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_batches_per_epoch = n_batches_per_epoch
        self.max_batches_per_epoch = max_batches_per_epoch
        self.lr = lr
        self.lr_disc = lr_disc
        self.seed = seed
        self.dtype = dtype
        self.warm_start = warm_start

    def _build_net(self):
        return CFANet(d_model=self.d_model, n_heads=self.n_heads, n_conv_layers=self.n_conv_layers,
                      kernel_size=self.kernel_size, hidden=self.hidden, disc_hidden=self.disc_hidden,
                      k=self.k, seed=self.seed, dtype=self._torch_dtype())

    def _train(self, sources, cfg):
        if self.adversarial:
            return train_cfa(self.net_, sources, cfg)
        return train_baseline(self.net_, sources, cfg)

    def _min_context(self):
        return 2

    def discriminate(self, X) -> np.ndarray:
        """Discriminator's normalized-period prediction for each raw context."""
        net = self._require_net()
        rows = check_contexts(X, self._min_context())
        dtype = next(net.parameters()).dtype
        out = [None] * len(rows)
        with torch.no_grad():
            for _, idx in group_by_length(rows).items():
                scaled, _, _ = scale_contexts(np.stack([rows[i] for i in idx]))
                K, Q = net.context_keys(torch.as_tensor(scaled, dtype=dtype))
                pred = net.discriminate(K, Q).double().numpy()
                for j, i in enumerate(idx):
                    out[i] = pred[j]
        return np.stack(out)


class LSTMForecaster(_NetForecaster):
    """Autoregressive LSTM baseline (previous value in, next value out)."""

    model_name = "lstm"
    _arch_keys = ("hidden", "n_layers", "dtype")

    def __init__(self, hidden=64, n_layers=2, epochs=10, batch_size=64, n_batches_per_epoch="auto",
                 max_batches_per_epoch=None, lr=1e-3, seed=0, dtype="float32", warm_start=False):
        self.hidden = hidden
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_batches_per_epoch = n_batches_per_epoch
        self.max_batches_per_epoch = max_batches_per_epoch
        self.lr = lr
        self.seed = seed
        self.dtype = dtype
        self.warm_start = warm_start

    def _build_net(self):
        return LSTMNet(hidden=self.hidden, n_layers=self.n_layers, seed=self.seed, dtype=self._torch_dtype())

    def _train(self, sources, cfg):
        return train_baseline(self.net_, sources, cfg)


FORECASTERS = {"mean": MeanForecaster, "cfa": CFAForecaster, "lstm": LSTMForecaster}


def make_forecaster(name: str, **params) -> BaseForecaster:
    if name not in FORECASTERS:
        raise ConfigError(f"model: unknown model {name!r}; choose from {sorted(FORECASTERS)}")
    cls = FORECASTERS[name]
    valid = cls().get_params()
    unknown = set(params) - set(valid)
    if unknown:
        raise ConfigError(f"model_params: unknown parameter(s) for {name}: {sorted(unknown)}")
    return cls(**params)


def save_forecaster(est: BaseForecaster, path) -> None:
    """Write a checkpoint; the manifest records the model name and its parameters."""
    meta = {"model": est.model_name, "params": est.get_params()}
    named, groups = {}, {}
    if est.model_name != "mean":
        net = est._require_net()
        named = dict(net.named_parameters())
        groups = net.group_of()
    nnet.save_checkpoint(Path(path), named, groups, meta)


def load_forecaster(path) -> BaseForecaster:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta, arrays, _ = nnet.load_checkpoint(path)
    est = make_forecaster(meta["model"], **meta["params"])
    if est.model_name == "mean":
        return est.fit()
    net = est._build_net()
    state = {name: torch.as_tensor(a) for name, a in arrays.items()}
    net.load_state_dict(state)
    net.eval()
    est.net_ = net
    est.history_ = []
    return est

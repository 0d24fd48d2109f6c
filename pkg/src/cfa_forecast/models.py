"""Forecasting networks: the frequency-adapter attention model, an autoregressive LSTM and the mean baseline.

All networks consume scaled contexts ``[B, tau_c]`` and produce scaled
forecasts ``[B, horizon]``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import nnet
from .exceptions import ContractError
from .nnet import DISCRIMINATIVE, GENERATIVE


class ForecastNet(nn.Module):
    """Shared surface of the trainable networks."""

    kind = ""

    def param_groups(self) -> dict[str, dict[str, nn.Parameter]]:
        return {GENERATIVE: dict(self.named_parameters())}

    def group_of(self) -> dict[str, str]:
        return {name: g for g, ps in self.param_groups().items() for name in ps}

    def hparams(self) -> dict:
        return {}

    def teacher_forced(self, context, target):
        raise NotImplementedError

    def forecast(self, context, horizon):
        raise NotImplementedError

    def representation(self, context):
        raise NotImplementedError


def _check_horizon(horizon):
    if int(horizon) <= 0:
        raise ContractError(f"horizon must be positive, got {horizon}")


class CFANet(ForecastNet):
    """Self-attention forecaster with a period-regressing discriminator on keys and queries.

    The encoder (position-wise MLP then causal convolutions) maps the scaled
    series to hidden states, projected separately to keys, queries and values.
    To predict step ``t + 1`` the query at position ``t`` attends over keys at
    positions ``j < t``, each paired with the value at ``j + 1``, so the
    attention reads out what followed the past positions that match the
    current one. The decoder maps the attention output to a scalar.
    """

    kind = "cfa"

    def __init__(self, d_model=64, n_heads=4, n_conv_layers=3, kernel_size=3, hidden=64,
                 disc_hidden=64, k=1, seed=0, dtype=torch.float32, zero_decoder=False):
        super().__init__()
        if d_model % n_heads:
            raise ContractError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        if kernel_size % 2 == 0:
            raise ContractError("kernel_size must be odd")
        self._hp = dict(d_model=d_model, n_heads=n_heads, n_conv_layers=n_conv_layers,
                        kernel_size=kernel_size, hidden=hidden, disc_hidden=disc_hidden, k=k)
        self.n_heads = n_heads
        self.k = k
        g = torch.Generator().manual_seed(int(seed))
        self.enc_mlp = nnet.MLP([1, hidden, d_model], g, dtype)
        self.convs = nn.ModuleList(
            nnet.Conv(d_model, d_model, kernel_size, "causal", g, dtype) for _ in range(n_conv_layers))
        self.proj_k = nnet.Dense(d_model, d_model, g, dtype)
        self.proj_q = nnet.Dense(d_model, d_model, g, dtype)
        self.proj_v = nnet.Dense(d_model, d_model, g, dtype)
        self.attn_out = nnet.Dense(d_model, d_model, g, dtype)
        self.decoder = nnet.MLP([d_model, hidden, 1], g, dtype, zero_last=zero_decoder)
        self.disc = nnet.MLP([2 * d_model, disc_hidden, disc_hidden, k], g, dtype)
        self.receptive_field = n_conv_layers * (kernel_size - 1) + 1

    def hparams(self):
        return dict(self._hp)

    def param_groups(self):
        gen, dis = {}, {}
        for name, p in self.named_parameters():
            (dis if name.startswith("disc.") else gen)[name] = p
        return {GENERATIVE: gen, DISCRIMINATIVE: dis}

    # -- encoder / attention / decoder

    def hidden_states(self, seq):
        if seq.shape[-1] < self._hp["kernel_size"]:
            raise ContractError(f"sequence length {seq.shape[-1]} shorter than kernel size")
        h = self.enc_mlp(seq.unsqueeze(-1))
        for conv in self.convs:
            h = torch.nn.functional.gelu(conv(h))
        return h

    def encode(self, seq):
        """``seq[..., T] -> (K, Q, V)`` each ``[..., T, d_model]``."""
        h = self.hidden_states(seq)
        return self.proj_k(h), self.proj_q(h), self.proj_v(h)

    def attend(self, K, Q, V, q_pos, return_weights=False):
        """Attention outputs for the queries at positions ``q_pos``.

        Query ``p`` sees keys ``0..p-1`` paired with values ``1..p``.
        """
        T = K.shape[-2]
        q_pos = torch.as_tensor(q_pos)
        if int(q_pos.min()) < 1:
            raise ContractError("a query needs at least one earlier position")
        keys = torch.arange(T - 1)
        mask = keys.unsqueeze(0) < q_pos.unsqueeze(1)
        return nnet.multi_head_attention(
            Q[..., q_pos, :], K[..., :-1, :], V[..., 1:, :], self.n_heads,
            self.attn_out.W, self.attn_out.b, mask=mask, return_weights=return_weights)

    def decode(self, a):
        return self.decoder(a).squeeze(-1)

    def discriminate(self, K, Q):
        if K.shape != Q.shape:
            raise ContractError("discriminate: K and Q shapes differ")
        pooled = torch.cat([K.mean(dim=-2), Q.mean(dim=-2)], dim=-1)
        return torch.sigmoid(self.disc(pooled))

    # -- forecasting

    def teacher_forced(self, context, target):
        """One-step predictions over the forecast window with true history.

        Returns ``(pred[B, tau_f], K_ctx, Q_ctx)``; keys/queries cover the
        context positions only.
        """
        tau_c, tau_f = context.shape[-1], target.shape[-1]
        seq = torch.cat([context, target[..., :-1]], dim=-1)
        K, Q, V = self.encode(seq)
        q_pos = torch.arange(tau_c - 1, tau_c - 1 + tau_f)
        pred = self.decode(self.attend(K, Q, V, q_pos))
        return pred, K[..., :tau_c, :], Q[..., :tau_c, :]

    def context_keys(self, context):
        K, Q, _ = self.encode(context)
        return K, Q

    def forecast(self, context, horizon, incremental=True):
        """Autoregressive forecast; each output is fed back as the next input.

        ``incremental`` re-encodes only the receptive field of the newest
        position, which the causal encoder makes identical to a full re-encode.
        """
        _check_horizon(horizon)
        K, Q, V = self.encode(context)
        seq = context
        out = []
        for _ in range(int(horizon)):
            T = seq.shape[-1]
            a = self.attend(K, Q, V, torch.tensor([T - 1]))
            y = self.decode(a)[..., 0]
            out.append(y)
            seq = torch.cat([seq, y.unsqueeze(-1)], dim=-1)
            if incremental and T + 1 >= self.receptive_field:
                k, q, v = self.encode(seq[..., -self.receptive_field:])
                K = torch.cat([K, k[..., -1:, :]], dim=-2)
                Q = torch.cat([Q, q[..., -1:, :]], dim=-2)
                V = torch.cat([V, v[..., -1:, :]], dim=-2)
            else:
                K, Q, V = self.encode(seq)
        return torch.stack(out, dim=-1)

    def representation(self, context):
        """Time-pooled keys of the context."""
        K, _ = self.context_keys(context)
        return K.mean(dim=-2)


class LSTMNet(ForecastNet):
    """Autoregressive LSTM: input is the previous value, a linear head predicts the next."""

    kind = "lstm"

    def __init__(self, hidden=64, n_layers=2, seed=0, dtype=torch.float32):
        super().__init__()
        self._hp = dict(hidden=hidden, n_layers=n_layers)
        g = torch.Generator().manual_seed(int(seed))
        self.layers = nn.ModuleList(
            nnet.LSTM(1 if i == 0 else hidden, hidden, g, dtype) for i in range(n_layers))
        self.head = nnet.Dense(hidden, 1, g, dtype)

    def hparams(self):
        return dict(self._hp)

    def run(self, seq, states=None):
        h = seq.unsqueeze(-1)
        states = states or [None] * len(self.layers)
        new_states = []
        for layer, st in zip(self.layers, states):
            h, st = layer(h, st)
            new_states.append(st)
        return h, new_states

    def teacher_forced(self, context, target):
        tau_c, tau_f = context.shape[-1], target.shape[-1]
        seq = torch.cat([context, target[..., :-1]], dim=-1)
        h, _ = self.run(seq)
        pred = self.head(h[..., tau_c - 1:, :]).squeeze(-1)
        return pred, None, None

    def forecast(self, context, horizon):
        _check_horizon(horizon)
        h, states = self.run(context)
        y = self.head(h[..., -1, :])
        out = [y[..., 0]]
        for _ in range(int(horizon) - 1):
            h, states = self.run(y, states)
            y = self.head(h[..., -1, :])
            out.append(y[..., 0])
        return torch.stack(out, dim=-1)

    def representation(self, context):
        """Final top-layer hidden state after reading the context."""
        h, _ = self.run(context)
        return h[..., -1, :]


def mean_forecast(context, horizon) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if context.shape[-1] == 0:
        raise ContractError("context must be non-empty")
    _check_horizon(horizon)
    m = context.mean(axis=-1, keepdims=True)
    return np.repeat(m, int(horizon), axis=-1)


def write_key_dump(path, representations: np.ndarray, periods: np.ndarray) -> None:
    """CSV with header ``k0,...,k{d-1},period``, one row per window."""
    representations = np.asarray(representations, dtype=np.float64)
    periods = np.asarray(periods, dtype=np.float64)
    if representations.ndim != 2 or len(representations) != len(periods):
        raise ContractError("key dump needs one representation row per period label")
    d = representations.shape[1]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"k{i}" for i in range(d)] + ["period"])
        for row, p in zip(representations, periods):
            w.writerow([repr(float(v)) for v in row] + [repr(float(p))])


def read_key_dump(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty key dump")
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header[-1] != "period" or header[:-1] != [f"k{i}" for i in range(d)]:
        raise ContractError(f"{path}: malformed key dump header")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ContractError(f"{path}: non-numeric entry in key dump") from exc
    if data.size == 0 or data.shape[1] != d + 1:
        raise ContractError(f"{path}: malformed key dump rows")
    return data[:, :d], data[:, d]

"""Differentiable building blocks, parameter groups, optimizer and checkpoint format.

Primitives are plain functions over :class:`torch.Tensor`; gradients come from
torch autograd. Layers accept any number of leading batch dimensions.

Checkpoint layout (all integers little-endian)::

    bytes 0..7    magic  b"CFACKPT1"
    bytes 8..15   uint64 manifest length L
    next L bytes  UTF-8 JSON manifest:
                  {"meta": {...},
                   "tensors": [{"name", "shape", "group", "dtype": "<f8" | "<f4",
                                "offset", "nbytes"}, ...]}
    remainder     concatenated raw IEEE-754 tensor data, row-major;
                  ``offset`` is relative to the start of this block
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import ContractError

GENERATIVE = "generative"
DISCRIMINATIVE = "discriminative"
GROUPS = (GENERATIVE, DISCRIMINATIVE)

MAGIC = b"CFACKPT1"


# ---------------------------------------------------------------- primitives


def linear(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    if x.shape[-1] != W.shape[0]:
        raise ContractError(f"linear: input dim {x.shape[-1]} != weight rows {W.shape[0]}")
    y = x @ W
    if b is not None:
        if b.shape[-1] != W.shape[1]:
            raise ContractError("linear: bias size does not match weight columns")
        y = y + b
    return y


def conv1d(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None,
           padding: str = "same") -> torch.Tensor:
    """Length-preserving convolution over the time axis of ``x[..., T, d_in]``.

    ``kernels`` has shape ``(d_out, d_in, kernel_size)``. ``"same"`` pads both
    sides (centered kernel); ``"causal"`` pads only the left so that output
    ``t`` depends on inputs ``<= t``.
    """
    ks = kernels.shape[-1]
    if ks % 2 == 0:
        raise ContractError(f"conv1d: kernel size must be odd, got {ks}")
    if x.shape[-1] != kernels.shape[1]:
        raise ContractError("conv1d: input channels do not match kernels")
    lead = x.shape[:-2]
    h = x.reshape(-1, *x.shape[-2:]).transpose(1, 2)
    if padding == "same":
        h = F.pad(h, ((ks - 1) // 2, (ks - 1) // 2))
    elif padding == "causal":
        h = F.pad(h, (ks - 1, 0))
    else:
        raise ContractError(f"conv1d: unknown padding {padding!r}")
    y = F.conv1d(h, kernels, bias)
    return y.transpose(1, 2).reshape(*lead, x.shape[-2], kernels.shape[0])


def lstm_layer(x: torch.Tensor, W_ih: torch.Tensor, W_hh: torch.Tensor, b: torch.Tensor,
               state: tuple[torch.Tensor, torch.Tensor] | None = None):
    """One LSTM layer over ``x[..., T, d_in]``.

    Gate order in the stacked weights is input, forget, cell, output
    (``W_ih: (4h, d_in)``, ``W_hh: (4h, h)``, ``b: (4h,)``).
    Returns the hidden sequence ``[..., T, h]`` and the final ``(h, c)``.
    """
    hdim = W_hh.shape[1]
    if W_ih.shape != (4 * hdim, x.shape[-1]) or W_hh.shape != (4 * hdim, hdim):
        raise ContractError("lstm_layer: weight shapes do not match input/hidden sizes")
    lead = x.shape[:-2]
    if state is None:
        h = x.new_zeros(*lead, hdim)
        c = x.new_zeros(*lead, hdim)
    else:
        h, c = state
        if h.shape[-1] != hdim or c.shape[-1] != hdim:
            raise ContractError("lstm_layer: state size does not match hidden size")
    xw = x @ W_ih.T + b
    outs = []
    for t in range(x.shape[-2]):
        gates = xw[..., t, :] + h @ W_hh.T
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        outs.append(h)
    return torch.stack(outs, dim=-2), (h, c)


def multi_head_attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, n_heads: int,
                         W_o: torch.Tensor, b_o: torch.Tensor | None = None,
                         mask: torch.Tensor | None = None, return_weights: bool = False):
    """Scaled dot-product attention split over ``n_heads`` heads.

    ``Q[..., Tq, d]``, ``K``/``V[..., Tk, d]``; ``mask[Tq, Tk]`` is True where a
    query may attend. Heads are concatenated and projected by ``W_o``.
    With ``return_weights`` the per-head weights ``[..., n_heads, Tq, Tk]``
    are returned too.
    """
    d = Q.shape[-1]
    if d % n_heads:
        raise ContractError(f"model dim {d} is not divisible by n_heads={n_heads}")
    if K.shape[-1] != d or V.shape[-1] != d or K.shape[-2] != V.shape[-2]:
        raise ContractError("attention: Q/K/V shapes disagree")
    dh = d // n_heads

    def heads(x):
        return x.reshape(*x.shape[:-1], n_heads, dh).transpose(-3, -2)

    q, k, v = heads(Q), heads(K), heads(V)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ v).transpose(-3, -2)
    out = out.reshape(*out.shape[:-2], d)
    out = linear(out, W_o, b_o)
    return (out, weights) if return_weights else out


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss: shapes {tuple(pred.shape)} and {tuple(target.shape)} differ")
    return ((pred - target) ** 2).mean()


def mae_sum(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ContractError(f"mae_sum: shapes {tuple(pred.shape)} and {tuple(target.shape)} differ")
    return (pred - target).abs().sum()


# -------------------------------------------------------------------- layers


def glorot_uniform(shape, fan_in: int, fan_out: int, generator: torch.Generator | None = None,
                   dtype=torch.float32) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (torch.rand(shape, generator=generator, dtype=dtype) * 2 - 1) * bound


class Dense(nn.Module):
    def __init__(self, d_in, d_out, generator=None, dtype=torch.float32, zero_weight=False):
        super().__init__()
        w = torch.zeros(d_in, d_out, dtype=dtype) if zero_weight else \
            glorot_uniform((d_in, d_out), d_in, d_out, generator, dtype)
        self.W = nn.Parameter(w)
        self.b = nn.Parameter(torch.zeros(d_out, dtype=dtype))

    def forward(self, x):
        return linear(x, self.W, self.b)


class MLP(nn.Module):
    """Position-wise MLP; GELU between layers, none after the last."""

    def __init__(self, sizes, generator=None, dtype=torch.float32, zero_last=False):
        super().__init__()
        n = len(sizes) - 1
        self.layers = nn.ModuleList(
            Dense(sizes[i], sizes[i + 1], generator, dtype, zero_weight=zero_last and i == n - 1)
            for i in range(n)
        )

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.gelu(x)
        return x


class Conv(nn.Module):
    def __init__(self, d_in, d_out, kernel_size, padding="causal", generator=None, dtype=torch.float32):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ContractError(f"kernel_size must be odd, got {kernel_size}")
        self.padding = padding
        self.kernels = nn.Parameter(glorot_uniform(
            (d_out, d_in, kernel_size), d_in * kernel_size, d_out * kernel_size, generator, dtype))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=dtype))

    def forward(self, x):
        return conv1d(x, self.kernels, self.bias, self.padding)


class LSTM(nn.Module):
    def __init__(self, d_in, d_hidden, generator=None, dtype=torch.float32, forget_bias=1.0):
        super().__init__()
        self.W_ih = nn.Parameter(glorot_uniform((4 * d_hidden, d_in), d_in, 4 * d_hidden, generator, dtype))
        self.W_hh = nn.Parameter(glorot_uniform((4 * d_hidden, d_hidden), d_hidden, 4 * d_hidden,
                                                generator, dtype))
        b = torch.zeros(4 * d_hidden, dtype=dtype)
        b[d_hidden:2 * d_hidden] = forget_bias
        self.b = nn.Parameter(b)

    def forward(self, x, state=None, fused=True):
        """Run over ``x[B, T, d_in]``; ``fused`` uses torch's LSTM kernel, same algebra as :func:`lstm_layer`."""
        if not fused or x.dim() != 3:
            return lstm_layer(x, self.W_ih, self.W_hh, self.b, state)
        B, hdim = x.shape[0], self.W_hh.shape[1]
        if state is None:
            h0 = x.new_zeros(1, B, hdim)
            c0 = x.new_zeros(1, B, hdim)
        else:
            h0, c0 = state[0].unsqueeze(0), state[1].unsqueeze(0)
        weights = [self.W_ih, self.W_hh, self.b, torch.zeros_like(self.b)]
        y, h, c = torch.lstm(x, (h0, c0), weights, True, 1, 0.0, self.training, False, True)
        return y, (h[0], c[0])


# ------------------------------------------------------ groups and optimizer


def make_optimizer(params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8) -> torch.optim.Adam:
    """Adam over one parameter group (one optimizer state per group)."""
    return torch.optim.Adam(list(params), lr=lr, betas=betas, eps=eps)


def adam_step(optimizer: torch.optim.Optimizer, grads: dict | None = None):
    """Apply one Adam update to the optimizer's parameters.

    If ``grads`` (param -> tensor) is given it replaces the accumulated
    ``.grad`` of those parameters first. Parameters outside the optimizer are
    never touched.
    """
    owned = {id(p) for g in optimizer.param_groups for p in g["params"]}
    if grads:
        for p, g in grads.items():
            if id(p) not in owned:
                raise ContractError("adam_step: gradient given for a parameter outside this group")
            p.grad = g.detach().clone()
    optimizer.step()


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, named_params: dict, groups: dict, meta: dict | None = None) -> None:
    """Write tensors plus a manifest; ``groups`` maps name -> group label."""
    entries, blobs, offset = [], [], 0
    for name, t in named_params.items():
        arr = t.detach().cpu().numpy()
        dt = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "group": groups.get(name),
                        "dtype": dt, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, str]]:
    """Returns ``(meta, arrays, groups)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    (mlen,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
    base = 16 + mlen
    arrays, groups = {}, {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
        groups[e["name"]] = e["group"]
    return manifest["meta"], arrays, groups

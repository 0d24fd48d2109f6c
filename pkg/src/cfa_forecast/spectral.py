"""Continuous domain indices from the amplitude spectrum of a context window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError

# Magnitudes closer than this (relative to the window's peak) count as tied.
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class DomainIndex:
    periods_normalized: np.ndarray

    @property
    def k(self) -> int:
        return int(self.periods_normalized.size)


def dft_magnitudes(window) -> np.ndarray:
    """Amplitudes of DFT bins ``1..n//2`` of the mean-removed window.

    Works row-wise on 2-D input.
    """
    x = np.asarray(window, dtype=np.float64)
    n = x.shape[-1]
    if n < 4:
        raise ContractError(f"window length must be >= 4, got {n}")
    x = x - x.mean(axis=-1, keepdims=True)
    return np.abs(np.fft.rfft(x, axis=-1))[..., 1:n // 2 + 1]


def _top_bins(mags: np.ndarray, k: int) -> np.ndarray:
    """Indices (0-based into ``mags``) of the k largest bins; ties go to the lower bin."""
    peak = mags.max(axis=-1, keepdims=True)
    quant = np.round(mags / np.where(peak > 0, peak, 1.0) / _TIE_RTOL)
    order = np.argsort(-quant, axis=-1, kind="stable")
    return order[..., :k]


def top_k_periods(magnitudes, n: int, k: int) -> np.ndarray:
    mags = np.asarray(magnitudes, dtype=np.float64)
    if k < 1 or k > mags.shape[-1]:
        raise ContractError(f"k must be in [1, {mags.shape[-1]}], got {k}")
    m = _top_bins(mags, k) + 1
    return n / m


def dominant_bin(window) -> np.ndarray | int:
    """1-based index of the strongest non-DC bin."""
    return _top_bins(dft_magnitudes(window), 1)[..., 0] + 1


def domain_index(context, k: int) -> DomainIndex:
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 1:
        raise ContractError("domain_index expects a single 1-D context window")
    return DomainIndex(domain_labels(context, k))


def domain_labels(contexts, k: int) -> np.ndarray:
    """Normalized top-k periods, ``period / len(context)``, for one or many windows."""
    contexts = np.asarray(contexts, dtype=np.float64)
    n = contexts.shape[-1]
    return top_k_periods(dft_magnitudes(contexts), n, k) / n

"""Input validation helpers shared by the estimators and evaluation code."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .data import DatasetSplit
from .exceptions import ConfigError, ContractError


def check_sources(sources) -> list[DatasetSplit]:
    if isinstance(sources, DatasetSplit):
        sources = [sources]
    sources = list(sources)
    if not sources:
        raise ConfigError("sources: need at least one training source")
    for s in sources:
        if not isinstance(s, DatasetSplit):
            raise ContractError(f"expected DatasetSplit, got {type(s).__name__}")
    return sources


def check_horizon(horizon) -> int:
    if isinstance(horizon, bool) or int(horizon) != horizon or horizon <= 0:
        raise ContractError(f"horizon must be a positive integer, got {horizon!r}")
    return int(horizon)


def check_contexts(X, min_length: int = 1) -> list[np.ndarray]:
    """Coerce a 2-D array or a sequence of 1-D arrays to a list of finite float vectors."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        rows = list(X.astype(np.float64))
    elif isinstance(X, np.ndarray) and X.ndim == 1:
        rows = [X.astype(np.float64)]
    else:
        rows = [np.asarray(x, dtype=np.float64) for x in X]
    if not rows:
        raise ContractError("no contexts given")
    for i, r in enumerate(rows):
        if r.ndim != 1:
            raise ContractError(f"context {i} is not one-dimensional")
        if r.size < min_length:
            raise ContractError(f"context {i} has length {r.size} < {min_length}")
        if not np.all(np.isfinite(r)):
            raise ContractError(f"context {i} contains non-finite values")
    return rows


def group_by_length(rows: list[np.ndarray]) -> dict[int, list[int]]:
    """Indices of equal-length rows, so they can be stacked into one batch."""
    groups = defaultdict(list)
    for i, r in enumerate(rows):
        groups[r.size].append(i)
    return dict(groups)

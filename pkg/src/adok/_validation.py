"""Light input-validation helpers shared by the estimator classes."""

from __future__ import annotations

import numpy as np

__all__ = ["as_float_array", "as_time_column", "check_consistent_length"]


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def as_time_column(X) -> np.ndarray:
    """Accept a 1-D time vector or an (n, 1) column and return it flat."""
    arr = as_float_array(X, "X")
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a single time column, got shape {arr.shape}")
    return arr


def check_consistent_length(*arrays) -> None:
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent sample counts: {sorted(lengths)}")

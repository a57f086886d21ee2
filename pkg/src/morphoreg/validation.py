"""Input validation helpers shared across the package.

``ValidationError`` marks precondition failures (bad shapes, bad config,
degenerate data). The CLI maps it to exit code 1; anything else that
escapes is a runtime failure (exit code 2).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ValidationError",
    "check_volume_batch",
    "check_targets",
    "check_finite",
    "check_paired_samples",
]


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")


def check_volume_batch(X, dtype=np.float32) -> np.ndarray:
    """Coerce X to a [N, 1, D, H, W] float array.

    Accepts [N, D, H, W] (a channel axis is added) or [N, C, D, H, W].
    """
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 4:
        arr = arr[:, None]
    if arr.ndim != 5:
        raise ValidationError(
            f"expected a batch of volumes with 4 or 5 axes, got shape {arr.shape}"
        )
    check_finite("volume batch", arr)
    return np.ascontiguousarray(arr)


def check_targets(y, n_measurements: int | None = None) -> np.ndarray:
    """Coerce y to a [N, M] float64 array of measurement targets."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"expected targets of shape [N, M], got {arr.shape}")
    if n_measurements is not None and arr.shape[1] != n_measurements:
        raise ValidationError(
            f"expected {n_measurements} measurements per row, got {arr.shape[1]}"
        )
    check_finite("targets", arr)
    return arr


def check_paired_samples(samples) -> np.ndarray:
    """Validate an [n, k] matrix of paired ratings (n >= 3, k >= 2, finite)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"paired samples must be 2-D, got shape {arr.shape}")
    n, k = arr.shape
    if n < 3:
        raise ValidationError(f"paired samples need at least 3 rows, got {n}")
    if k < 2:
        raise ValidationError(f"paired samples need at least 2 columns, got {k}")
    if not np.isfinite(arr).all():
        raise ValidationError("paired samples contain missing or non-finite values")
    return arr

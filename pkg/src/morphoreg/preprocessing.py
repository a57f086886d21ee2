"""Target normalization.

Measurements are rescaled to [0, 1] by per-measurement min-max statistics
taken over the training split only; validation/test targets transformed
with the same scaler may legitimately fall outside [0, 1]. No clamping
anywhere, so the transform is exactly invertible.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ._base import BaseEstimator
from .validation import ValidationError, check_targets

__all__ = ["TargetMinMaxScaler"]


class TargetMinMaxScaler(BaseEstimator):
    """Per-measurement min-max scaler with an exact inverse transform."""

    def __init__(self, measurement_names: Optional[Sequence[str]] = None):
        self.measurement_names = measurement_names

    def fit(self, y, X=None):
        arr = check_targets(y)
        if self.measurement_names is not None and len(self.measurement_names) != arr.shape[1]:
            raise ValidationError(
                f"{len(self.measurement_names)} measurement names for "
                f"{arr.shape[1]} measurement columns"
            )
        mins = arr.min(axis=0)
        maxs = arr.max(axis=0)
        degenerate = np.flatnonzero(maxs <= mins)
        if degenerate.size:
            idx = int(degenerate[0])
            name = (
                self.measurement_names[idx]
                if self.measurement_names is not None
                else f"column {idx}"
            )
            raise ValidationError(
                f"measurement {name!r} is degenerate: all training values equal "
                f"{mins[idx]!r}"
            )
        self.data_min_ = mins
        self.data_max_ = maxs
        self.scale_ = maxs - mins
        self.n_measurements_ = arr.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "data_min_"):
            raise ValidationError("scaler is not fitted")

    def transform(self, y) -> np.ndarray:
        self._check_fitted()
        arr = check_targets(y, self.n_measurements_)
        return (arr - self.data_min_) / self.scale_

    def inverse_transform(self, y) -> np.ndarray:
        self._check_fitted()
        arr = check_targets(y, self.n_measurements_)
        return arr * self.scale_ + self.data_min_

    def fit_transform(self, y, X=None) -> np.ndarray:
        return self.fit(y).transform(y)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "measurement_names": None
            if self.measurement_names is None
            else list(self.measurement_names),
            "data_min": [float(v) for v in self.data_min_],
            "data_max": [float(v) for v in self.data_max_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetMinMaxScaler":
        scaler = cls(measurement_names=d.get("measurement_names"))
        scaler.data_min_ = np.asarray(d["data_min"], dtype=np.float64)
        scaler.data_max_ = np.asarray(d["data_max"], dtype=np.float64)
        scaler.scale_ = scaler.data_max_ - scaler.data_min_
        scaler.n_measurements_ = scaler.data_min_.size
        return scaler

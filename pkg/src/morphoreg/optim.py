"""Optimizers and the weight-averaging machinery.

Adam (bias-corrected moments, defaults lr=1e-4, beta1=0.9, beta2=0.999,
eps=1e-8) drives the main phase; plain SGD without momentum follows a
piecewise-linear cyclic learning-rate schedule during the averaging
phase. Snapshots taken at the minimum of each cycle feed a running mean
whose result is the final model. Moment and averaging arithmetic run in
float64 regardless of parameter storage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .nn import ModelState
from .validation import ValidationError

__all__ = [
    "NonFiniteGradientError",
    "Adam",
    "SGD",
    "CyclicSchedule",
    "cyclic_lr",
    "SwaAccumulator",
    "BestSelector",
]


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or inf; the step was rejected."""

    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient for parameter {parameter!r}; step rejected")
        self.parameter = parameter


def _check_grads(state: ModelState, grads: Mapping[str, np.ndarray]) -> None:
    for name, tensor in state.params.items():
        g = grads.get(name)
        if g is None:
            raise ValidationError(f"missing gradient for parameter {name!r}")
        if g.shape != tensor.shape:
            raise ValidationError(
                f"gradient shape {g.shape} does not match parameter {name!r} {tensor.shape}"
            )
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)


class Adam:
    """Adam with bias correction, updating a ModelState in place.

    All gradients are checked for finiteness before anything mutates, so
    a rejected step leaves parameters and moments untouched.
    """

    def __init__(
        self,
        state: ModelState,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValidationError(f"lr must be positive, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ValidationError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.state = state
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros(t.shape, dtype=np.float64) for n, t in state.params.items()}
        self.v = {n: np.zeros(t.shape, dtype=np.float64) for n, t in state.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        _check_grads(self.state, grads)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, tensor in self.state.params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            tensor.data[...] = (tensor.data.astype(np.float64) - update).astype(tensor.dtype)


class SGD:
    """Plain gradient descent, no momentum; lr is supplied per step."""

    def __init__(self, state: ModelState):
        self.state = state
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        if lr <= 0:
            raise ValidationError(f"lr must be positive, got {lr}")
        _check_grads(self.state, grads)
        self.t += 1
        for name, tensor in self.state.params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            tensor.data[...] = (tensor.data.astype(np.float64) - lr * g).astype(tensor.dtype)


@dataclass(frozen=True)
class CyclicSchedule:
    """Piecewise-linear schedule from lr_max down to lr_min over each
    cycle of ``cycle_len`` steps, repeated ``n_cycles`` times."""

    cycle_len: int
    lr_max: float = 1e-2
    lr_min: float = 1e-6
    n_cycles: int = 5

    def __post_init__(self):
        if self.cycle_len < 2:
            raise ValidationError(f"cycle_len must be >= 2, got {self.cycle_len}")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValidationError(
                f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}"
            )
        if self.n_cycles < 1:
            raise ValidationError(f"n_cycles must be >= 1, got {self.n_cycles}")

    @property
    def total_steps(self) -> int:
        return self.cycle_len * self.n_cycles


def cyclic_lr(step: int, sched: CyclicSchedule) -> float:
    """Learning rate at ``step``: lr_max at each cycle start, lr_min at
    each cycle end (both exact), linear in between, periodic."""
    if step < 0:
        raise ValidationError(f"step must be >= 0, got {step}")
    phase = step % sched.cycle_len
    if phase == 0:
        return sched.lr_max
    if phase == sched.cycle_len - 1:
        return sched.lr_min
    frac = phase / (sched.cycle_len - 1)
    return sched.lr_max - (sched.lr_max - sched.lr_min) * frac


class SwaAccumulator:
    """Running mean of flat parameter snapshots, in float64."""

    def __init__(self):
        self.running_mean: Optional[np.ndarray] = None
        self.count = 0

    def absorb(self, snapshot: np.ndarray) -> "SwaAccumulator":
        snap = np.asarray(snapshot, dtype=np.float64)
        if snap.ndim != 1:
            raise ValidationError(f"snapshot must be a flat vector, got shape {snap.shape}")
        if self.running_mean is None:
            self.running_mean = snap.copy()
        else:
            if snap.shape != self.running_mean.shape:
                raise ValidationError(
                    f"snapshot length {snap.shape[0]} does not match "
                    f"running mean length {self.running_mean.shape[0]}"
                )
            self.running_mean = (self.running_mean * self.count + snap) / (self.count + 1)
        self.count += 1
        return self

    @property
    def mean(self) -> np.ndarray:
        if self.running_mean is None:
            raise ValidationError("no snapshots absorbed yet")
        return self.running_mean


class BestSelector:
    """Keeps the parameters with the highest validation mean ICC.

    Replacement requires strict improvement, so ties keep the earlier
    epoch.
    """

    def __init__(self):
        self.best_mean_icc = -math.inf
        self.best_params: Optional[np.ndarray] = None
        self.epoch_of_best = -1

    def update(self, epoch: int, mean_val_icc: float, state: ModelState) -> bool:
        if not math.isfinite(mean_val_icc):
            raise ValidationError(f"mean validation ICC must be finite, got {mean_val_icc}")
        if mean_val_icc > self.best_mean_icc:
            self.best_mean_icc = mean_val_icc
            self.best_params = state.flatten()
            self.epoch_of_best = epoch
            return True
        return False

    def restore(self, state: ModelState) -> None:
        if self.best_params is None:
            raise ValidationError("no evaluated epoch to restore from")
        state.set_flat(self.best_params)

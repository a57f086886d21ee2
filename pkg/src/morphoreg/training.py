"""The full training recipe and model evaluation.

Order is fixed and traced: an Adam phase at constant lr with periodic
validation-ICC model selection, restore of the best weights, then SWA:
``swa_cycles`` rounds of plain SGD under the cyclic linear schedule, one
parameter snapshot at each cycle's minimum-lr step, and the arithmetic
mean of the snapshots as the final model. With ``swa_cycles = 0`` the
run is the Adam-only baseline and the best checkpoint is the final
model.

Every optimizer step appends one row to the training log CSV
(phase, epoch, step, lr, train_mse, val_mean_icc, wall_time_s);
validation evaluations append a row with ``val_mean_icc`` set. A
non-finite loss or gradient aborts the run but keeps the last good
parameters (written to disk when a checkpoint directory is active).
"""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .metrics import MeasurementIcc, icc_2_1
from .nn import ModelState, model_forward
from .optim import (
    SGD,
    Adam,
    BestSelector,
    CyclicSchedule,
    NonFiniteGradientError,
    SwaAccumulator,
    cyclic_lr,
)
from .phantom import AugmentConfig, Volume3D, augment
from .preprocessing import TargetMinMaxScaler
from .tape import Tape, Tensor
from .validation import ValidationError

__all__ = [
    "TrainConfig",
    "TrainData",
    "TrainResult",
    "TrainingDiverged",
    "train_model",
    "predict_normalized",
    "evaluate_predictions",
    "evaluate_state",
]


class TrainingDiverged(RuntimeError):
    """Loss or gradient went non-finite; last good parameters retained."""

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 6
    adam_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    main_epochs: int = 60
    eval_interval: int = 1
    swa_cycles: int = 5
    swa_cycle_epochs: int = 4
    swa_lr_max: float = 1e-2
    swa_lr_min: float = 1e-6
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.main_epochs < 0 or self.swa_cycles < 0:
            raise ValidationError("epoch and cycle counts must be non-negative")
        if self.swa_cycles > 0 and self.swa_cycle_epochs < 1:
            raise ValidationError("swa_cycle_epochs must be >= 1 when SWA is enabled")
        if self.eval_interval < 1:
            raise ValidationError(f"eval_interval must be >= 1, got {self.eval_interval}")
        self.augment.validate()
        return self


@dataclass
class TrainData:
    """Arrays the trainer consumes; targets for training are already
    normalized, validation targets stay in raw units."""

    X_train: np.ndarray  # [N, 1, D, H, W] float32
    Y_train_norm: np.ndarray  # [N, M]
    X_val: np.ndarray
    Y_val_raw: np.ndarray
    scaler: TargetMinMaxScaler
    names: Sequence[str]
    kinds: Sequence[str]

    def validate(self) -> "TrainData":
        if self.X_train.ndim != 5 or self.X_val.ndim != 5:
            raise ValidationError("volume arrays must be [N, 1, D, H, W]")
        if len(self.X_train) != len(self.Y_train_norm):
            raise ValidationError("training volumes and targets differ in length")
        if len(self.X_val) != len(self.Y_val_raw):
            raise ValidationError("validation volumes and targets differ in length")
        if self.Y_train_norm.shape[1] != self.Y_val_raw.shape[1]:
            raise ValidationError("train and validation measurement counts differ")
        if len(self.names) != self.Y_train_norm.shape[1]:
            raise ValidationError("measurement names do not match target columns")
        return self


@dataclass
class TrainResult:
    state: ModelState  # final model (SWA mean, or best-Adam when swa_cycles=0)
    best_state: ModelState
    best_epoch: int
    best_val_icc: float
    swa_snapshots: list[np.ndarray]
    swa_schedule: Optional[CyclicSchedule]
    log_rows: list[dict]
    trace: list[tuple]
    final_val_icc: float


LOG_COLUMNS = ("phase", "epoch", "step", "lr", "train_mse", "val_mean_icc", "wall_time_s")


class _TrainLog:
    def __init__(self, path: Optional[str]):
        self.rows: list[dict] = []
        self._fh = None
        self._writer = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOG_COLUMNS)

    def append(self, **row):
        full = {col: row.get(col, "") for col in LOG_COLUMNS}
        self.rows.append(full)
        if self._writer is not None:
            self._writer.writerow([full[col] for col in LOG_COLUMNS])
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def predict_normalized(state: ModelState, X: np.ndarray, batch_size: int = 6) -> np.ndarray:
    """Inference over X in batches; returns normalized predictions [N, M]."""
    outs = []
    for start in range(0, len(X), batch_size):
        chunk = np.ascontiguousarray(X[start : start + batch_size])
        outs.append(model_forward(state, chunk).combined.data)
    return np.concatenate(outs, axis=0).astype(np.float64)


def evaluate_predictions(
    preds_raw: np.ndarray,
    Y_raw: np.ndarray,
    names: Sequence[str],
    kinds: Sequence[str],
) -> list[MeasurementIcc]:
    entries = []
    for m, (name, kind) in enumerate(zip(names, kinds)):
        paired = np.column_stack([Y_raw[:, m], preds_raw[:, m]])
        entries.append(MeasurementIcc(name, kind, icc_2_1(paired)))
    return entries


def evaluate_state(
    state: ModelState,
    X: np.ndarray,
    Y_raw: np.ndarray,
    scaler: TargetMinMaxScaler,
    names: Sequence[str],
    kinds: Sequence[str],
    batch_size: int = 6,
) -> tuple[float, list[MeasurementIcc]]:
    """Mean point-estimate ICC across measurements, plus the per-measurement
    results; predictions are denormalized through the stored scaler."""
    preds = scaler.inverse_transform(predict_normalized(state, X, batch_size))
    entries = evaluate_predictions(preds, Y_raw, names, kinds)
    mean_icc = float(np.mean([e.result.icc for e in entries]))
    return mean_icc, entries


def _augment_batch(X, indices, cfg: AugmentConfig, rng) -> np.ndarray:
    if cfg.noise_prob == 0 and cfg.translate_prob == 0 and cfg.rotate_prob == 0:
        return np.ascontiguousarray(X[indices])
    out = np.empty((len(indices),) + X.shape[1:], dtype=X.dtype)
    for row, idx in enumerate(indices):
        out[row, 0] = augment(Volume3D(X[idx, 0]), cfg, rng).voxels
    return out


def train_model(
    state: ModelState,
    data: TrainData,
    cfg: TrainConfig,
    log_path: Optional[str] = None,
    checkpoint_dir: Optional[str] = None,
    save_checkpoint_fn: Optional[Callable] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Run the full recipe on ``state`` (mutated in place)."""
    cfg.validate()
    data.validate()
    if checkpoint_dir is not None and save_checkpoint_fn is None:
        from .checkpoint import save_checkpoint as save_checkpoint_fn  # noqa: PLC0415

    n_train = len(data.X_train)
    steps_per_epoch = max(1, math.ceil(n_train / cfg.batch_size))
    kinds = tuple(data.kinds)
    names = tuple(data.names)
    M = data.Y_train_norm.shape[1]
    if state.spec.n_outputs != M:
        raise ValidationError(
            f"model emits {state.spec.n_outputs} measurements but data has {M}"
        )
    if len(data.X_val) < 3:
        raise ValidationError(
            f"validation split has {len(data.X_val)} scans; ICC model selection "
            "needs at least 3"
        )

    seed_seq = np.random.SeedSequence(cfg.seed)
    rng_order, rng_aug = [np.random.default_rng(s) for s in seed_seq.spawn(2)]

    log = _TrainLog(log_path)
    trace: list[tuple] = []
    selector = BestSelector()
    t0 = time.perf_counter()
    global_step = 0
    epoch = 0
    last_good = state.flatten()

    def say(msg):
        if progress is not None:
            progress(msg)

    def checkpoint(tag, **meta):
        if checkpoint_dir is None:
            return None
        path = os.path.join(checkpoint_dir, f"{tag}.mrck")
        save_checkpoint_fn(path, state, scaler=data.scaler, meta={"tag": tag, **meta})
        return path

    def abort(reason: str) -> TrainingDiverged:
        state.set_flat(last_good)
        path = checkpoint("last_good", reason=reason)
        log.close()
        return TrainingDiverged(f"training aborted: {reason}", checkpoint_path=path)

    def one_step(optimizer, lr_for_log, phase, sgd_lr=None):
        nonlocal global_step, last_good
        indices = order[batch_start : batch_start + cfg.batch_size]
        batch = _augment_batch(data.X_train, indices, cfg.augment, rng_aug)
        targets = Tensor(data.Y_train_norm[indices], dtype=state.dtype)
        tape = Tape()
        result = model_forward(state, batch, tape=tape)
        loss = ops.mse_loss(result.combined, targets, tape=tape)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise abort(f"non-finite training loss at step {global_step}")
        grads = tape.backward(loss)
        by_name = {name: grads.get(t) for name, t in result.params.items()}
        try:
            if sgd_lr is None:
                optimizer.step(by_name)
            else:
                optimizer.step(by_name, sgd_lr)
        except NonFiniteGradientError as err:  # keep last good weights
            raise abort(str(err)) from err
        last_good = state.flatten()
        log.append(
            phase=phase,
            epoch=epoch,
            step=global_step,
            lr=repr(lr_for_log),
            train_mse=repr(loss_value),
            wall_time_s=round(time.perf_counter() - t0, 3),
        )
        global_step += 1

    def run_validation(phase):
        mean_icc, _ = evaluate_state(
            state, data.X_val, data.Y_val_raw, data.scaler, names, kinds, cfg.batch_size
        )
        log.append(
            phase=phase,
            epoch=epoch,
            step=global_step,
            lr="",
            val_mean_icc=repr(mean_icc),
            wall_time_s=round(time.perf_counter() - t0, 3),
        )
        return mean_icc

    # ----- phase 1: Adam with early-stopping model selection ---------------
    adam = Adam(
        state,
        lr=cfg.adam_lr,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )
    for epoch in range(cfg.main_epochs):
        trace.append(("adam_epoch", epoch))
        order = rng_order.permutation(n_train)
        for batch_start in range(0, n_train, cfg.batch_size):
            one_step(adam, cfg.adam_lr, "adam")
        if (epoch + 1) % cfg.eval_interval == 0 or epoch == cfg.main_epochs - 1:
            mean_icc = run_validation("adam")
            improved = selector.update(epoch, mean_icc, state)
            trace.append(("val_eval", epoch, mean_icc))
            if improved:
                trace.append(("new_best", epoch))
            say(f"epoch {epoch}: val mean ICC {mean_icc:+.4f}{' *' if improved else ''}")

    if selector.best_params is not None:
        selector.restore(state)
        last_good = state.flatten()
        trace.append(("restore_best", selector.epoch_of_best))
        say(f"restored best epoch {selector.epoch_of_best} "
            f"(val mean ICC {selector.best_mean_icc:+.4f})")
    best_state = state.copy()
    checkpoint("best_adam", epoch=selector.epoch_of_best)

    # ----- phase 2: SWA cycles of SGD under the cyclic schedule ------------
    snapshots: list[np.ndarray] = []
    schedule = None
    if cfg.swa_cycles > 0:
        schedule = CyclicSchedule(
            cycle_len=cfg.swa_cycle_epochs * steps_per_epoch,
            lr_max=cfg.swa_lr_max,
            lr_min=cfg.swa_lr_min,
            n_cycles=cfg.swa_cycles,
        )
        sgd = SGD(state)
        accumulator = SwaAccumulator()
        swa_step = 0
        epoch = cfg.main_epochs
        for cycle in range(cfg.swa_cycles):
            trace.append(("swa_cycle", cycle))
            for _ in range(cfg.swa_cycle_epochs):
                order = rng_order.permutation(n_train)
                for batch_start in range(0, n_train, cfg.batch_size):
                    lr = cyclic_lr(swa_step, schedule)
                    one_step(sgd, lr, "swa", sgd_lr=lr)
                    swa_step += 1
                epoch += 1
            snapshot = state.flatten()
            snapshots.append(snapshot)
            accumulator.absorb(snapshot)
            trace.append(("swa_snapshot", cycle))
            checkpoint(f"swa_snapshot_{cycle + 1}", cycle=cycle)
            say(f"swa cycle {cycle + 1}/{cfg.swa_cycles} snapshot taken")
        state.set_flat(accumulator.mean)
        trace.append(("swa_final",))
        checkpoint("swa_final")
    else:
        trace.append(("swa_skipped",))
        checkpoint("final")

    final_val_icc = run_validation("final")
    trace.append(("final_eval", final_val_icc))
    say(f"final model val mean ICC {final_val_icc:+.4f}")
    log.close()

    return TrainResult(
        state=state,
        best_state=best_state,
        best_epoch=selector.epoch_of_best,
        best_val_icc=selector.best_mean_icc,
        swa_snapshots=snapshots,
        swa_schedule=schedule,
        log_rows=log.rows,
        trace=trace,
        final_val_icc=final_val_icc,
    )

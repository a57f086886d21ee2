"""Scikit-learn style regressor wrapping the full pipeline.

``MultiScaleVoxelRegressor.fit(X, y)`` normalizes targets with a min-max
scaler fit on the training targets only, builds the multi-head residual
network for the input geometry, and runs the whole recipe (Adam with
validation-ICC model selection, then cyclic-SGD weight averaging).
``predict`` returns denormalized measurements; ``score`` is the mean
ICC(2,1) point estimate across measurements, so cross-validation
utilities optimize the same quantity the trainer selects on.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ._base import BaseEstimator
from .nn import build_model, desk_network, single_head
from .phantom import AugmentConfig
from .preprocessing import TargetMinMaxScaler
from .training import TrainConfig, TrainData, evaluate_predictions, predict_normalized, train_model
from .validation import ValidationError, check_targets, check_volume_batch

__all__ = ["MultiScaleVoxelRegressor"]


class MultiScaleVoxelRegressor(BaseEstimator):
    """Multi-head 3-D residual regressor with the Adam -> SWA recipe.

    Parameters mirror the training configuration; all are plain values so
    the estimator clones cleanly. ``n_heads`` is 4 for the multi-scale
    model or 1 for the single-funnel ablation.
    """

    def __init__(
        self,
        n_heads: int = 4,
        stem_channels: int = 16,
        stage_channels: Sequence[int] = (16, 32, 64, 128),
        batch_size: int = 6,
        adam_lr: float = 1e-4,
        epochs: int = 60,
        eval_interval: int = 1,
        swa_cycles: int = 5,
        swa_cycle_epochs: int = 4,
        swa_lr_max: float = 1e-2,
        swa_lr_min: float = 1e-6,
        augment: Optional[AugmentConfig] = None,
        validation_fraction: float = 0.15,
        seed_model: int = 0,
        seed_train: int = 0,
        verbose: int = 0,
    ):
        self.n_heads = n_heads
        self.stem_channels = stem_channels
        self.stage_channels = stage_channels
        self.batch_size = batch_size
        self.adam_lr = adam_lr
        self.epochs = epochs
        self.eval_interval = eval_interval
        self.swa_cycles = swa_cycles
        self.swa_cycle_epochs = swa_cycle_epochs
        self.swa_lr_max = swa_lr_max
        self.swa_lr_min = swa_lr_min
        self.augment = augment
        self.validation_fraction = validation_fraction
        self.seed_model = seed_model
        self.seed_train = seed_train
        self.verbose = verbose

    # -- plumbing ------------------------------------------------------------

    def _network_for(self, dims: tuple[int, int, int], n_outputs: int):
        if self.n_heads == len(self.stage_channels):
            return desk_network(
                n_outputs=n_outputs,
                input_dims=dims,
                stem_channels=self.stem_channels,
                stage_channels=tuple(self.stage_channels),
            )
        if self.n_heads == 1:
            return single_head(
                desk_network(
                    n_outputs=n_outputs,
                    input_dims=dims,
                    stem_channels=self.stem_channels,
                    stage_channels=tuple(self.stage_channels),
                )
            )
        raise ValidationError(
            f"n_heads must be 1 or {len(self.stage_channels)} (one per stage), "
            f"got {self.n_heads}"
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            adam_lr=self.adam_lr,
            main_epochs=self.epochs,
            eval_interval=self.eval_interval,
            swa_cycles=self.swa_cycles,
            swa_cycle_epochs=self.swa_cycle_epochs,
            swa_lr_max=self.swa_lr_max,
            swa_lr_min=self.swa_lr_min,
            seed=self.seed_train,
            augment=self.augment if self.augment is not None else AugmentConfig(),
        ).validate()

    # -- sklearn API -----------------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None, measurement_names=None, measurement_kinds=None):
        """Train on volumes X [N,(1,)D,H,W] and targets y [N,M].

        Without an explicit validation set, the trailing
        ``validation_fraction`` of the samples is held out (callers doing
        patient-wise splits should pass X_val/y_val themselves).
        """
        X = check_volume_batch(X)
        y = check_targets(y)
        if len(X) != len(y):
            raise ValidationError(f"{len(X)} volumes but {len(y)} target rows")

        if (X_val is None) != (y_val is None):
            raise ValidationError("pass X_val and y_val together")
        if X_val is None:
            n_val = max(3, int(round(self.validation_fraction * len(X))))
            if len(X) - n_val < 1:
                raise ValidationError(
                    f"not enough samples ({len(X)}) to hold out {n_val} for validation"
                )
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = y[:-n_val], y[-n_val:]
        else:
            X_val = check_volume_batch(X_val)
            y_val = check_targets(y_val, y.shape[1])

        M = y.shape[1]
        names = list(measurement_names) if measurement_names is not None else [
            f"m{i}" for i in range(M)
        ]
        kinds = list(measurement_kinds) if measurement_kinds is not None else ["volume"] * M
        scaler = TargetMinMaxScaler(measurement_names=names).fit(y)

        spec = self._network_for(tuple(X.shape[2:]), M)
        state = build_model(spec, seed=self.seed_model)
        data = TrainData(
            X_train=X,
            Y_train_norm=scaler.transform(y),
            X_val=X_val,
            Y_val_raw=y_val,
            scaler=scaler,
            names=names,
            kinds=kinds,
        )
        progress = print if self.verbose else None
        result = train_model(state, data, self._train_config(), progress=progress)

        self.network_ = spec
        self.model_state_ = result.state
        self.scaler_ = scaler
        self.measurement_names_ = names
        self.measurement_kinds_ = kinds
        self.n_measurements_ = M
        self.best_epoch_ = result.best_epoch
        self.best_val_icc_ = result.best_val_icc
        self.final_val_icc_ = result.final_val_icc
        self.train_result_ = result
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_state_"):
            raise ValidationError("estimator is not fitted")

    def predict(self, X) -> np.ndarray:
        """Denormalized measurement predictions, [N, M]."""
        self._check_fitted()
        X = check_volume_batch(X)
        preds = predict_normalized(self.model_state_, X, self.batch_size)
        return self.scaler_.inverse_transform(preds)

    def score(self, X, y) -> float:
        """Mean ICC(2,1) point estimate across measurements."""
        self._check_fitted()
        y = check_targets(y, self.n_measurements_)
        entries = evaluate_predictions(
            self.predict(X), y, self.measurement_names_, self.measurement_kinds_
        )
        return float(np.mean([e.result.icc for e in entries]))

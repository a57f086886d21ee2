"""Run configuration: one flat key = value namespace.

Resolution order: built-in defaults, then the schedule preset, then the
config file, then command-line flags. The resolved mapping is written
into every output directory as ``config.resolved``, and that file alone
is enough to re-execute the run.

Schedule presets:
    desk   60 Adam epochs, 5 SWA cycles of 4 epochs (the default)
    paper  170 Adam epochs, same SWA recipe, full-size augmentation
           bounds (+-15 voxels, +-30 degrees)
    smoke  8 subjects at 16^3, 2 Adam epochs, 1 SWA cycle; minutes on a
           laptop
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import get_type_hints

from .kvfile import read_kv, write_kv
from .phantom import AugmentConfig
from .training import TrainConfig
from .validation import ValidationError

__all__ = ["RunConfig", "SCHEDULE_PRESETS", "resolve_config"]


@dataclass
class RunConfig:
    # dataset generation
    n_subjects: int = 40
    volume_dim: int = 32
    voxel_size: float = 1.0
    supersampling: int = 4
    scans_min: int = 1
    scans_max: int = 3
    ratio_train: float = 0.60
    ratio_validation: float = 0.15
    ratio_test: float = 0.25
    # network
    n_heads: int = 4
    stem_channels: int = 16
    stage_channels: str = "16,32,64,128"
    # schedule
    schedule: str = "desk"
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
    # augmentation
    augment_noise_prob: float = 0.5
    augment_noise_sigma: float = 0.05
    augment_translate_prob: float = 0.5
    augment_max_translation: int = 3
    augment_rotate_prob: float = 0.25
    augment_max_rotation_deg: float = 15.0
    augment_interpolation: str = "trilinear"
    # seeds: data generation, model init, training order/augmentation
    seed_data: int = 0
    seed_model: int = 0
    seed_train: int = 0

    def stage_channel_tuple(self) -> tuple[int, ...]:
        try:
            channels = tuple(int(c) for c in self.stage_channels.split(",") if c.strip())
        except ValueError:
            raise ValidationError(
                f"stage_channels must be comma-separated integers, got {self.stage_channels!r}"
            ) from None
        if not channels:
            raise ValidationError("stage_channels must not be empty")
        return channels

    def dims(self) -> tuple[int, int, int]:
        return (self.volume_dim,) * 3

    def ratios(self) -> tuple[float, float, float]:
        return (self.ratio_train, self.ratio_validation, self.ratio_test)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            noise_prob=self.augment_noise_prob,
            noise_sigma=self.augment_noise_sigma,
            translate_prob=self.augment_translate_prob,
            max_translation=self.augment_max_translation,
            rotate_prob=self.augment_rotate_prob,
            max_rotation_deg=self.augment_max_rotation_deg,
            interpolation=self.augment_interpolation,
        ).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            adam_lr=self.adam_lr,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            main_epochs=self.main_epochs,
            eval_interval=self.eval_interval,
            swa_cycles=self.swa_cycles,
            swa_cycle_epochs=self.swa_cycle_epochs,
            swa_lr_max=self.swa_lr_max,
            swa_lr_min=self.swa_lr_min,
            seed=self.seed_train,
            augment=self.augment_config(),
        ).validate()

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def write(self, path) -> None:
        write_kv(path, self.to_mapping())


SCHEDULE_PRESETS: dict[str, dict] = {
    "desk": {},
    "paper": {
        "main_epochs": 170,
        "augment_max_translation": 15,
        "augment_max_rotation_deg": 30.0,
    },
    "smoke": {
        "n_subjects": 8,
        "volume_dim": 16,
        "scans_min": 3,
        "scans_max": 3,
        "main_epochs": 2,
        "swa_cycles": 1,
    },
}

_FIELD_TYPES = get_type_hints(RunConfig)
_FIELD_NAMES = tuple(_FIELD_TYPES.keys())


def _coerce(key: str, raw: str):
    target = _FIELD_TYPES[key]
    try:
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {target.__name__}") from None


def resolve_config(
    config_path: str | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Defaults -> schedule preset -> config file -> explicit overrides."""
    file_values: dict = {}
    if config_path is not None:
        for key, raw in read_kv(config_path).items():
            if key not in _FIELD_NAMES:
                raise ValidationError(f"unknown config key {key!r} in {config_path}")
            file_values[key] = _coerce(key, raw)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in overrides:
        if key not in _FIELD_NAMES:
            raise ValidationError(f"unknown config override {key!r}")

    schedule = overrides.get("schedule", file_values.get("schedule", "desk"))
    if schedule not in SCHEDULE_PRESETS:
        raise ValidationError(
            f"unknown schedule {schedule!r}; expected one of {sorted(SCHEDULE_PRESETS)}"
        )
    values: dict = {"schedule": schedule}
    values.update(SCHEDULE_PRESETS[schedule])
    for key, val in file_values.items():
        values[key] = val
    for key, val in overrides.items():
        values[key] = val
    return RunConfig(**values)

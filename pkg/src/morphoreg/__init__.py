"""morphoreg: multi-scale 3-D residual regression of volumetric
morphometric measures, evaluated with ICC(2,1) agreement statistics on
synthetic phantoms whose targets are known in closed form."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import build_dataset, load_split, read_manifest, split_subjects
from .estimator import MultiScaleVoxelRegressor
from .metrics import (
    IccResult,
    MeasurementIcc,
    aggregate,
    band,
    icc_2_1,
    improvement_pct,
)
from .nn import ModelState, NetworkSpec, build_model, desk_network, model_forward, single_head
from .optim import Adam, CyclicSchedule, SGD, SwaAccumulator, cyclic_lr
from .phantom import (
    AugmentConfig,
    PhantomParams,
    TargetVector,
    Volume3D,
    augment,
    generate_phantom,
    sample_params,
)
from .preprocessing import TargetMinMaxScaler
from .tape import Gradients, Tape, Tensor
from .training import TrainConfig, TrainData, train_model
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AugmentConfig",
    "CyclicSchedule",
    "Gradients",
    "IccResult",
    "MeasurementIcc",
    "ModelState",
    "MultiScaleVoxelRegressor",
    "NetworkSpec",
    "PhantomParams",
    "SGD",
    "SwaAccumulator",
    "Tape",
    "TargetMinMaxScaler",
    "TargetVector",
    "Tensor",
    "TrainConfig",
    "TrainData",
    "ValidationError",
    "Volume3D",
    "aggregate",
    "augment",
    "band",
    "build_dataset",
    "build_model",
    "cyclic_lr",
    "desk_network",
    "generate_phantom",
    "icc_2_1",
    "improvement_pct",
    "load_checkpoint",
    "load_split",
    "model_forward",
    "read_manifest",
    "sample_params",
    "save_checkpoint",
    "single_head",
    "split_subjects",
    "train_model",
    "__version__",
]

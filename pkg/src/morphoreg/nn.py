"""Network definition and forward pass.

The model is a 3-D residual trunk (stem conv + max-pool, then a sequence
of residual stages) with one regression head per tapped stage. Each head
is GlobalAvgPool -> FullyConnected and emits all M measurements; the
combined prediction is a per-measurement convex mix of the head outputs,
with mixing weights given by a softmax over learnable logits ``alpha``
of shape [H, M]. Convolutions use zero padding of k//2, so 3x3x3 layers
preserve shape at stride 1 and the 1x1x1 projection shortcut pads by 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import ops
from .tape import Tape, Tensor
from .validation import ValidationError

__all__ = [
    "Conv3D",
    "MaxPool3D",
    "ReLU",
    "FullyConnected",
    "GlobalAvgPool",
    "ResBlock",
    "NetworkSpec",
    "ModelState",
    "ForwardResult",
    "desk_network",
    "single_head",
    "build_model",
    "res_block_forward",
    "model_forward",
]


@dataclass(frozen=True)
class Conv3D:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int

    @property
    def padding(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class MaxPool3D:
    kernel: int
    stride: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class FullyConnected:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class ResBlock:
    channels: int
    stride: int


_LAYER_TYPES = {
    cls.__name__: cls
    for cls in (Conv3D, MaxPool3D, ReLU, FullyConnected, GlobalAvgPool, ResBlock)
}

StemLayer = Union[Conv3D, MaxPool3D, ReLU]


def _conv_out(extent: int, kernel: int, stride: int, padding: int) -> int:
    padded = extent + 2 * padding
    if kernel > padded:
        raise ValidationError(
            f"kernel size {kernel} exceeds padded extent {padded}"
        )
    return (padded - kernel) // stride + 1


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of the trunk, stages, and head taps."""

    n_outputs: int
    input_dims: tuple[int, int, int] = (32, 32, 32)
    in_channels: int = 1
    stem: tuple[StemLayer, ...] = ()
    stages: tuple[tuple[ResBlock, ...], ...] = ()
    tap_stages: Optional[tuple[int, ...]] = None

    def taps(self) -> tuple[int, ...]:
        if self.tap_stages is None:
            return tuple(range(len(self.stages)))
        return self.tap_stages

    @property
    def n_heads(self) -> int:
        return len(self.taps())

    def validate(self) -> "NetworkSpec":
        """Shape-propagate the whole network; raises naming the offending
        layer when chaining or geometry is inconsistent."""
        if self.n_outputs < 1:
            raise ValidationError(f"n_outputs must be positive, got {self.n_outputs}")
        if len(self.input_dims) != 3 or any(d < 1 for d in self.input_dims):
            raise ValidationError(f"input_dims must be three positive extents, got {self.input_dims}")
        if self.in_channels < 1:
            raise ValidationError(f"in_channels must be positive, got {self.in_channels}")
        if not self.stages:
            raise ValidationError("network needs at least one stage")

        channels = self.in_channels
        dims = tuple(self.input_dims)
        for i, layer in enumerate(self.stem):
            where = f"stem layer {i} ({type(layer).__name__})"
            if isinstance(layer, Conv3D):
                if min(layer.in_channels, layer.out_channels, layer.kernel, layer.stride) < 1:
                    raise ValidationError(f"{where}: parameters must be positive")
                if layer.in_channels != channels:
                    raise ValidationError(
                        f"{where}: expects {layer.in_channels} input channels "
                        f"but receives {channels}"
                    )
                try:
                    dims = tuple(
                        _conv_out(d, layer.kernel, layer.stride, layer.padding) for d in dims
                    )
                except ValidationError as err:
                    raise ValidationError(f"{where}: {err}") from None
                channels = layer.out_channels
            elif isinstance(layer, MaxPool3D):
                if min(layer.kernel, layer.stride) < 1:
                    raise ValidationError(f"{where}: parameters must be positive")
                if layer.kernel > min(dims):
                    raise ValidationError(
                        f"{where}: pooling window {layer.kernel} exceeds extents {dims}"
                    )
                dims = tuple((d - layer.kernel) // layer.stride + 1 for d in dims)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ValidationError(f"{where}: not a valid stem layer")
            if min(dims) < 1:
                raise ValidationError(f"{where}: spatial dims collapse to {dims}")

        for s, stage in enumerate(self.stages):
            if not stage:
                raise ValidationError(f"stage {s} is empty")
            for b, block in enumerate(stage):
                where = f"stage {s} block {b}"
                if block.channels < 1:
                    raise ValidationError(f"{where}: channels must be positive")
                if block.stride not in (1, 2):
                    raise ValidationError(f"{where}: stride must be 1 or 2, got {block.stride}")
                dims = tuple(_conv_out(d, 3, block.stride, 1) for d in dims)
                if min(dims) < 1:
                    raise ValidationError(f"{where}: spatial dims collapse to {dims}")
                channels = block.channels

        taps = self.taps()
        if not taps:
            raise ValidationError("tap_stages must select at least one stage")
        if list(taps) != sorted(set(taps)) or any(
            not 0 <= t < len(self.stages) for t in taps
        ):
            raise ValidationError(
                f"tap_stages {taps} must be strictly increasing stage indices "
                f"below {len(self.stages)}"
            )
        return self

    def stage_channels(self) -> tuple[int, ...]:
        """Output channels of each stage."""
        return tuple(stage[-1].channels for stage in self.stages)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def enc(layer):
            d = {"type": type(layer).__name__}
            d.update(layer.__dict__)
            return d

        return {
            "n_outputs": self.n_outputs,
            "input_dims": list(self.input_dims),
            "in_channels": self.in_channels,
            "stem": [enc(l) for l in self.stem],
            "stages": [[enc(b) for b in stage] for stage in self.stages],
            "tap_stages": None if self.tap_stages is None else list(self.tap_stages),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        def dec(entry):
            kind = entry.get("type")
            if kind not in _LAYER_TYPES:
                raise ValidationError(f"unknown layer type {kind!r}")
            kwargs = {k: v for k, v in entry.items() if k != "type"}
            return _LAYER_TYPES[kind](**kwargs)

        return cls(
            n_outputs=int(d["n_outputs"]),
            input_dims=tuple(int(x) for x in d["input_dims"]),
            in_channels=int(d["in_channels"]),
            stem=tuple(dec(e) for e in d["stem"]),
            stages=tuple(tuple(dec(e) for e in stage) for stage in d["stages"]),
            tap_stages=None
            if d.get("tap_stages") is None
            else tuple(int(t) for t in d["tap_stages"]),
        )


def desk_network(
    n_outputs: int = 12,
    input_dims: tuple[int, int, int] = (32, 32, 32),
    stem_channels: int = 16,
    stage_channels: Sequence[int] = (16, 32, 64, 128),
    blocks_per_stage: int = 1,
    tap_stages: Optional[Sequence[int]] = None,
) -> NetworkSpec:
    """Default desk-scale network: stem conv + pool, then one residual
    stage per entry of ``stage_channels`` with stride 2 between stages."""
    stem = (Conv3D(1, stem_channels, 3, 1), ReLU(), MaxPool3D(2, 2))
    stages = []
    for s, channels in enumerate(stage_channels):
        blocks = [ResBlock(channels, 1 if s == 0 else 2)]
        blocks.extend(ResBlock(channels, 1) for _ in range(blocks_per_stage - 1))
        stages.append(tuple(blocks))
    return NetworkSpec(
        n_outputs=n_outputs,
        input_dims=tuple(input_dims),
        in_channels=1,
        stem=stem,
        stages=tuple(stages),
        tap_stages=None if tap_stages is None else tuple(tap_stages),
    ).validate()


def single_head(spec: NetworkSpec) -> NetworkSpec:
    """Ablation variant: tap only the deepest stage (H=1 funnel regressor)."""
    return NetworkSpec(
        n_outputs=spec.n_outputs,
        input_dims=spec.input_dims,
        in_channels=spec.in_channels,
        stem=spec.stem,
        stages=spec.stages,
        tap_stages=(len(spec.stages) - 1,),
    ).validate()


# ---------------------------------------------------------------------------
# Parameters


class ModelState:
    """All learnable parameters, in a stable name order.

    flatten()/set_flat() round-trip exactly, which is what weight
    averaging relies on.
    """

    def __init__(self, spec: NetworkSpec, params: dict[str, Tensor], dtype):
        self.spec = spec
        self.params = params
        self.dtype = np.dtype(dtype)

    def names(self) -> list[str]:
        return list(self.params.keys())

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.params.values()])

    def set_flat(self, vector: np.ndarray) -> None:
        if vector.shape != (self.n_parameters,):
            raise ValidationError(
                f"flat vector has {vector.shape}, expected ({self.n_parameters},)"
            )
        offset = 0
        for t in self.params.values():
            span = t.size
            t.data[...] = vector[offset : offset + span].reshape(t.shape).astype(self.dtype)
            offset += span

    def copy(self) -> "ModelState":
        params = {name: t.copy() for name, t in self.params.items()}
        return ModelState(self.spec, params, self.dtype)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


def _he_normal(rng, shape, fan_in, dtype):
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape), dtype=dtype)


def build_model(spec: NetworkSpec, seed: int, dtype=np.float32) -> ModelState:
    """Deterministically initialize all parameters for ``spec``.

    Conv and FC weights are He-normal in the fan-in; biases start at zero
    and the head-mixing logits ``alpha`` start at zero, i.e. a uniform
    head mixture after softmax.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    params: dict[str, Tensor] = {}

    def add_conv(name, in_ch, out_ch, k):
        fan_in = in_ch * k**3
        params[f"{name}.weight"] = _he_normal(rng, (out_ch, in_ch, k, k, k), fan_in, dtype)
        params[f"{name}.bias"] = Tensor(np.zeros(out_ch), dtype=dtype)

    channels = spec.in_channels
    for i, layer in enumerate(spec.stem):
        if isinstance(layer, Conv3D):
            add_conv(f"stem{i}", layer.in_channels, layer.out_channels, layer.kernel)
            channels = layer.out_channels

    for s, stage in enumerate(spec.stages):
        for b, block in enumerate(stage):
            prefix = f"stage{s}.block{b}"
            add_conv(f"{prefix}.conv1", channels, block.channels, 3)
            add_conv(f"{prefix}.conv2", block.channels, block.channels, 3)
            if block.stride != 1 or channels != block.channels:
                add_conv(f"{prefix}.proj", channels, block.channels, 1)
            channels = block.channels

    stage_channels = spec.stage_channels()
    for h, tap in enumerate(spec.taps()):
        fan_in = stage_channels[tap]
        params[f"head{h}.weight"] = _he_normal(rng, (fan_in, spec.n_outputs), fan_in, dtype)
        params[f"head{h}.bias"] = Tensor(np.zeros(spec.n_outputs), dtype=dtype)

    params["alpha"] = Tensor(np.zeros((spec.n_heads, spec.n_outputs)), dtype=dtype)
    return ModelState(spec, params, dtype)


# ---------------------------------------------------------------------------
# Forward


@dataclass
class ForwardResult:
    per_head: Tensor  # [H, N, M]
    combined: Tensor  # [N, M]
    params: Mapping[str, Tensor] = field(default_factory=dict)  # watched views


def res_block_forward(
    x: Tensor,
    conv1_w: Tensor,
    conv1_b: Tensor,
    conv2_w: Tensor,
    conv2_b: Tensor,
    proj_w: Optional[Tensor] = None,
    proj_b: Optional[Tensor] = None,
    stride: int = 1,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Residual block: relu(conv -> relu -> conv plus shortcut).

    The shortcut is the identity when shape-preserving, otherwise the
    provided strided 1x1x1 projection.
    """
    out = ops.conv3d(x, conv1_w, conv1_b, stride=stride, padding=1, tape=tape)
    out = ops.relu(out, tape=tape)
    out = ops.conv3d(out, conv2_w, conv2_b, stride=1, padding=1, tape=tape)
    if proj_w is not None:
        shortcut = ops.conv3d(x, proj_w, proj_b, stride=stride, padding=0, tape=tape)
    else:
        if stride != 1 or x.shape[1] != conv2_w.shape[0]:
            raise ValidationError(
                "res_block_forward: identity shortcut needs shape-preserving block"
            )
        shortcut = x
    return ops.relu(ops.add(out, shortcut, tape=tape), tape=tape)


def model_forward(state: ModelState, batch, tape: Optional[Tape] = None) -> ForwardResult:
    """Run the network on a [N, C, D, H, W] batch.

    With a tape, all parameters are watched on it and returned so the
    caller can fetch their gradients after backward.
    """
    spec = state.spec
    if isinstance(batch, Tensor):
        x = batch if batch.dtype == state.dtype else Tensor(batch.data, dtype=state.dtype)
    else:
        x = Tensor(batch, dtype=state.dtype)
    if x.data.ndim != 5:
        raise ValidationError(f"batch must be [N, C, D, H, W], got shape {x.shape}")
    if x.shape[1] != spec.in_channels or tuple(x.shape[2:]) != tuple(spec.input_dims):
        raise ValidationError(
            f"batch shape {x.shape} does not match network input "
            f"[{spec.in_channels}, {spec.input_dims}]"
        )

    if tape is None:
        watched: Mapping[str, Tensor] = state.params
    else:
        watched = {name: tape.watch(t) for name, t in state.params.items()}

    for i, layer in enumerate(spec.stem):
        if isinstance(layer, Conv3D):
            x = ops.conv3d(
                x,
                watched[f"stem{i}.weight"],
                watched[f"stem{i}.bias"],
                stride=layer.stride,
                padding=layer.padding,
                tape=tape,
            )
        elif isinstance(layer, MaxPool3D):
            x = ops.maxpool3d(x, k=layer.kernel, stride=layer.stride, tape=tape)
        elif isinstance(layer, ReLU):
            x = ops.relu(x, tape=tape)

    taps = spec.taps()
    head_outputs: list[Tensor] = []
    head_index = 0
    for s, stage in enumerate(spec.stages):
        for b, block in enumerate(stage):
            prefix = f"stage{s}.block{b}"
            proj_w = watched.get(f"{prefix}.proj.weight")
            proj_b = watched.get(f"{prefix}.proj.bias")
            x = res_block_forward(
                x,
                watched[f"{prefix}.conv1.weight"],
                watched[f"{prefix}.conv1.bias"],
                watched[f"{prefix}.conv2.weight"],
                watched[f"{prefix}.conv2.bias"],
                proj_w,
                proj_b,
                stride=block.stride,
                tape=tape,
            )
        if s in taps:
            feats = ops.global_avg_pool(x, tape=tape)
            head_outputs.append(
                ops.linear(
                    feats,
                    watched[f"head{head_index}.weight"],
                    watched[f"head{head_index}.bias"],
                    tape=tape,
                )
            )
            head_index += 1

    per_head = ops.stack(head_outputs, tape=tape)
    weights = ops.softmax(watched["alpha"], axis=0, tape=tape)
    combined = ops.mix_heads(per_head, weights, tape=tape)
    return ForwardResult(per_head=per_head, combined=combined, params=watched)

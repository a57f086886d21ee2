"""Synthetic volumetric phantoms with closed-form morphometric targets.

Each phantom is a hollow spherical shell centred in the volume plus four
solid spherical blobs strictly inside the hollow interior. The shell is
split into four angular quadrants by the signs of the (H, W) axes; every
quadrant has its own mid-surface radius and thickness, so the targets
are exact: blob volumes (4/3) pi r^3, quadrant thicknesses t_q, and
quadrant mean curvatures 1/r_q (a sphere patch of radius r has mean
curvature 1/r). Rendering evaluates binary occupancy on a supersampled
grid and averages it down, approximating partial volume; structures are
disjoint by construction so intensities simply add.

Augmentation applies rigid transforms plus additive noise. Rigid moves
preserve every morphometric target, which is exactly why nothing here
ever touches a TargetVector.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .validation import ValidationError

__all__ = [
    "KIND_UNITS",
    "Measurement",
    "TargetVector",
    "Volume3D",
    "PhantomParams",
    "AugmentConfig",
    "generate_phantom",
    "sample_params",
    "jitter_params",
    "augment",
    "rotate_volume",
    "translate_volume",
]

log = logging.getLogger(__name__)

KIND_UNITS = {"volume": "mm^3", "thickness": "mm", "curvature": "1/mm"}

_QUADRANT_COUNT = 4
_BLOB_COUNT = 4

# tetrahedral directions: well separated, one blob per spatial "corner"
_BLOB_DIRECTIONS = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / math.sqrt(3.0)


@dataclass(frozen=True)
class Measurement:
    name: str
    kind: str
    value: float

    @property
    def unit(self) -> str:
        return KIND_UNITS[self.kind]


@dataclass(frozen=True)
class TargetVector:
    entries: tuple[Measurement, ...]

    def __post_init__(self):
        for m in self.entries:
            if m.kind not in KIND_UNITS:
                raise ValidationError(f"unknown measurement kind {m.kind!r}")
            if m.value <= 0:
                raise ValidationError(f"measurement {m.name!r} must be positive, got {m.value}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.entries)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(m.kind for m in self.entries)

    @property
    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.entries], dtype=np.float64)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Volume3D:
    """Single-channel voxel grid with isotropic physical voxel size."""

    voxels: np.ndarray  # [D, H, W] float32
    voxel_size: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.voxels, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(f"volume must be 3-D with positive dims, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("volume contains non-finite intensities")
        if self.voxel_size <= 0:
            raise ValidationError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "voxels", np.ascontiguousarray(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class PhantomParams:
    """Full description of one renderable phantom scan."""

    dims: tuple[int, int, int] = (32, 32, 32)
    voxel_size: float = 1.0
    shell_radius: float = 10.0  # base mid-surface radius, mm
    shell_thickness: float = 2.0  # base thickness, mm
    quadrant_radius_scale: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    quadrant_thickness_scale: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    blob_centers: tuple[tuple[float, float, float], ...] = field(
        default_factory=lambda: tuple(
            tuple(float(x) for x in 4.0 * d) for d in _BLOB_DIRECTIONS
        )
    )
    blob_radii: tuple[float, ...] = (2.0, 2.2, 2.4, 2.6)
    shell_intensity: float = 1.0
    # identity is intensity-coded: the smallest blob is the brightest
    blob_intensities: tuple[float, ...] = (0.95, 0.80, 0.65, 0.50)
    supersampling: int = 4

    def quadrant_radii(self) -> np.ndarray:
        return self.shell_radius * np.asarray(self.quadrant_radius_scale, dtype=np.float64)

    def quadrant_thicknesses(self) -> np.ndarray:
        return self.shell_thickness * np.asarray(self.quadrant_thickness_scale, dtype=np.float64)

    def validate(self) -> "PhantomParams":
        if len(self.dims) != 3 or min(self.dims) < 4:
            raise ValidationError(f"dims must be three extents >= 4, got {self.dims}")
        if self.voxel_size <= 0:
            raise ValidationError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.supersampling < 1:
            raise ValidationError(f"supersampling must be >= 1, got {self.supersampling}")
        for name, seq, count in (
            ("quadrant_radius_scale", self.quadrant_radius_scale, _QUADRANT_COUNT),
            ("quadrant_thickness_scale", self.quadrant_thickness_scale, _QUADRANT_COUNT),
            ("blob_centers", self.blob_centers, _BLOB_COUNT),
            ("blob_radii", self.blob_radii, _BLOB_COUNT),
            ("blob_intensities", self.blob_intensities, _BLOB_COUNT),
        ):
            if len(seq) != count:
                raise ValidationError(f"{name} must have {count} entries, got {len(seq)}")
        intensities = (self.shell_intensity, *self.blob_intensities)
        if any(not 0.0 < level <= 1.0 for level in intensities):
            raise ValidationError(f"intensity levels must lie in (0, 1], got {intensities}")

        radii = self.quadrant_radii()
        thick = self.quadrant_thicknesses()
        if (radii <= 0).any() or (thick <= 0).any():
            raise ValidationError("shell radii and thicknesses must be positive")
        inner = radii - thick / 2.0
        outer = radii + thick / 2.0
        if (inner <= 0).any():
            raise ValidationError("shell thickness exceeds its mid-radius")

        half_extent = min(self.dims) * self.voxel_size / 2.0
        margin = 2.0 * self.voxel_size
        if outer.max() > half_extent - margin:
            raise ValidationError(
                f"shell outer radius {outer.max():.3f} mm leaves less than a "
                f"2-voxel margin inside half-extent {half_extent:.3f} mm"
            )
        inner_min = float(inner.min())
        for i, (center, rho) in enumerate(zip(self.blob_centers, self.blob_radii)):
            if rho <= 0:
                raise ValidationError(f"blob {i} radius must be positive, got {rho}")
            extent = float(np.linalg.norm(center)) + rho
            if extent >= inner_min:
                raise ValidationError(
                    f"blob {i} extent {extent:.3f} mm reaches the shell interior "
                    f"radius {inner_min:.3f} mm"
                )
        return self

    def targets(self) -> TargetVector:
        entries = [
            Measurement(f"vol_blob{i}", "volume", (4.0 / 3.0) * math.pi * rho**3)
            for i, rho in enumerate(self.blob_radii)
        ]
        entries += [
            Measurement(f"thk_q{q}", "thickness", float(t))
            for q, t in enumerate(self.quadrant_thicknesses())
        ]
        entries += [
            Measurement(f"curv_q{q}", "curvature", float(1.0 / r))
            for q, r in enumerate(self.quadrant_radii())
        ]
        return TargetVector(tuple(entries))


def _axis_coords(extent: int, factor: int, voxel_size: float) -> np.ndarray:
    """Physical coordinates of supersample points, relative to the centre."""
    fine = (np.arange(extent * factor, dtype=np.float64) + 0.5) * (voxel_size / factor)
    return fine - extent * voxel_size / 2.0


def generate_phantom(params: PhantomParams) -> tuple[Volume3D, TargetVector]:
    """Render a phantom and return it with its exact targets.

    Rendering is deterministic: supersample points sit on a regular
    subgrid, occupancy is binary per point, and voxel intensity is the
    mean over the point block (times the structure level).
    """
    params.validate()
    D, H, W = params.dims
    f = params.supersampling
    cd = _axis_coords(D, f, params.voxel_size)
    ch = _axis_coords(H, f, params.voxel_size)
    cw = _axis_coords(W, f, params.voxel_size)

    radii = params.quadrant_radii()
    thick = params.quadrant_thicknesses()
    # quadrant index per (H, W) position: sign of H axis, then W axis
    quad = ((ch[:, None] < 0) * 2 + (cw[None, :] < 0)).astype(np.int64)
    r_mid_map = radii[quad]
    half_t_map = thick[quad] / 2.0

    centers = np.asarray(params.blob_centers, dtype=np.float64)
    blob_r2 = np.asarray(params.blob_radii, dtype=np.float64) ** 2
    blob_levels = np.asarray(params.blob_intensities, dtype=np.float64)

    out = np.empty((D, H, W), dtype=np.float32)
    hw2 = ch[:, None] ** 2 + cw[None, :] ** 2
    # chunk along D so the fine-grid working set stays around 4M points
    chunk = max(1, 4_000_000 // (H * W * f**3))
    for d0 in range(0, D, chunk):
        d1 = min(d0 + chunk, D)
        pd = cd[d0 * f : d1 * f]
        r = np.sqrt(pd[:, None, None] ** 2 + hw2[None, :, :])
        fine = np.where(
            np.abs(r - r_mid_map[None]) <= half_t_map[None],
            params.shell_intensity,
            0.0,
        )
        for i in range(_BLOB_COUNT):
            dist2 = (
                (pd[:, None, None] - centers[i, 0]) ** 2
                + (ch[None, :, None] - centers[i, 1]) ** 2
                + (cw[None, None, :] - centers[i, 2]) ** 2
            )
            fine += np.where(dist2 <= blob_r2[i], blob_levels[i], 0.0)
        block = fine.reshape(d1 - d0, f, H, f, W, f)
        out[d0:d1] = block.mean(axis=(1, 3, 5)).astype(np.float32)

    return Volume3D(out, voxel_size=params.voxel_size), params.targets()


# ---------------------------------------------------------------------------
# Parameter sampling

# Sampling ranges are expressed for a 32 mm half... full 32-voxel, 1 mm
# volume and scaled linearly to other field sizes.
_REFERENCE_HALF_EXTENT = 16.0


def sample_params(
    rng: np.random.Generator,
    dims: tuple[int, int, int] = (32, 32, 32),
    voxel_size: float = 1.0,
    supersampling: int = 4,
) -> PhantomParams:
    """Draw one subject's phantom parameters; always satisfies containment."""
    half_extent = min(dims) * voxel_size / 2.0
    s = half_extent / _REFERENCE_HALF_EXTENT
    # worst-case shell outer radius is 13.83 reference units; cap the scale so
    # the mandatory 2-voxel margin survives even after re-scan jitter
    s = min(s, (half_extent - 2.0 * voxel_size) / 14.1)
    if s <= 0:
        raise ValidationError(
            f"volume of dims {dims} at {voxel_size} mm voxels is too small for a phantom"
        )

    shell_radius = rng.uniform(10.8, 11.8) * s
    shell_thickness = rng.uniform(1.6, 2.4) * s
    radius_scale = tuple(rng.uniform(0.95, 1.05, size=_QUADRANT_COUNT))
    thickness_scale = tuple(rng.uniform(0.80, 1.20, size=_QUADRANT_COUNT))

    radii = shell_radius * np.asarray(radius_scale)
    thick = shell_thickness * np.asarray(thickness_scale)
    inner_min = float((radii - thick / 2.0).min())

    # blob centre distance first, then radii bounded by (a) shell clearance
    # and (b) pairwise separation: tetrahedral directions are 109.47 degrees
    # apart, so centres at distance d sit sqrt(8/3)*d from each other. Wide
    # spacing keeps the blobs individually resolvable, and disjoint
    # per-blob size bands give each its own scale (as distinct anatomical
    # structures have), so identity survives regression.
    d = rng.uniform(0.50, 0.56) * inner_min
    rho_cap = min(
        inner_min - 2.0 * s - d,
        0.5 * math.sqrt(8.0 / 3.0) * d - 0.95 * s,
    )
    rho_cap = max(rho_cap, 0.4 * s)
    size_bands = ((0.62, 0.72), (0.72, 0.81), (0.81, 0.90), (0.90, 0.99))
    blob_radii = np.array([rng.uniform(lo, hi) for lo, hi in size_bands]) * rho_cap
    centers = tuple(tuple(float(x) for x in d * direction) for direction in _BLOB_DIRECTIONS)

    return PhantomParams(
        dims=tuple(dims),
        voxel_size=voxel_size,
        shell_radius=shell_radius,
        shell_thickness=shell_thickness,
        quadrant_radius_scale=radius_scale,
        quadrant_thickness_scale=thickness_scale,
        blob_centers=centers,
        blob_radii=tuple(float(r) for r in blob_radii),
        supersampling=supersampling,
    ).validate()


def jitter_params(
    params: PhantomParams, rng: np.random.Generator, rel: float = 0.004
) -> PhantomParams:
    """Re-scan jitter: every continuous quantity moves by under 1 percent."""

    def wiggle(value):
        return value * (1.0 + rng.uniform(-rel, rel))

    return replace(
        params,
        shell_radius=wiggle(params.shell_radius),
        shell_thickness=wiggle(params.shell_thickness),
        quadrant_radius_scale=tuple(wiggle(v) for v in params.quadrant_radius_scale),
        quadrant_thickness_scale=tuple(wiggle(v) for v in params.quadrant_thickness_scale),
        blob_centers=tuple(tuple(wiggle(c) for c in center) for center in params.blob_centers),
        blob_radii=tuple(wiggle(r) for r in params.blob_radii),
    ).validate()


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentConfig:
    """Rigid + noise augmentation; each transform fires with its own
    probability. Desk-scale bounds by default; ``paper_scale`` mirrors the
    full-size recipe (+-15 voxels, +-30 degrees)."""

    noise_prob: float = 0.5
    noise_sigma: float = 0.05
    translate_prob: float = 0.5
    max_translation: int = 3
    rotate_prob: float = 0.25
    max_rotation_deg: float = 15.0
    interpolation: str = "trilinear"

    @classmethod
    def paper_scale(cls) -> "AugmentConfig":
        return cls(max_translation=15, max_rotation_deg=30.0)

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(noise_prob=0.0, translate_prob=0.0, rotate_prob=0.0)

    def validate(self) -> "AugmentConfig":
        for name in ("noise_prob", "translate_prob", "rotate_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {p}")
        if self.noise_sigma < 0 or self.max_translation < 0 or self.max_rotation_deg < 0:
            raise ValidationError("augmentation magnitudes must be non-negative")
        if self.interpolation not in ("trilinear", "nearest"):
            raise ValidationError(f"unknown interpolation {self.interpolation!r}")
        return self


def _rotation_matrix(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    u = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValidationError("rotation axis must be non-zero")
    u = u / norm
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    ux, uy, uz = u
    cross = np.array([[0, -uz, uy], [uz, 0, -ux], [-uy, ux, 0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(u, u)


def _trilinear_sample(vol: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Sample ``vol`` at fractional index coordinates q [3, ...], zero fill."""
    D, H, W = vol.shape
    base = np.floor(q).astype(np.int64)
    frac = q - base
    out = np.zeros(q.shape[1:], dtype=np.float64)
    for corner in range(8):
        offs = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = base + offs[:, None, None, None]
        weight = np.ones(q.shape[1:], dtype=np.float64)
        for ax in range(3):
            weight = weight * np.where(offs[ax] == 1, frac[ax], 1.0 - frac[ax])
        inside = (
            (idx[0] >= 0) & (idx[0] < D)
            & (idx[1] >= 0) & (idx[1] < H)
            & (idx[2] >= 0) & (idx[2] < W)
        )
        i0 = np.clip(idx[0], 0, D - 1)
        i1 = np.clip(idx[1], 0, H - 1)
        i2 = np.clip(idx[2], 0, W - 1)
        out += weight * inside * vol[i0, i1, i2]
    return out


def rotate_volume(
    volume: Volume3D,
    axis: Sequence[float],
    angle_deg: float,
    interpolation: str = "trilinear",
) -> Volume3D:
    """Rotate about the volume centre; background fills with zero."""
    if interpolation not in ("trilinear", "nearest"):
        raise ValidationError(f"unknown interpolation {interpolation!r}")
    vol = volume.voxels.astype(np.float64)
    D, H, W = vol.shape
    rot = _rotation_matrix(np.asarray(axis, dtype=np.float64), math.radians(angle_deg))
    center = np.array([(D - 1) / 2.0, (H - 1) / 2.0, (W - 1) / 2.0])
    grid = np.stack(
        np.meshgrid(np.arange(D), np.arange(H), np.arange(W), indexing="ij")
    ).astype(np.float64)
    rel = grid - center[:, None, None, None]
    # output voxel p samples the input at R^T (p - c) + c
    q = np.einsum("ji,jdhw->idhw", rot, rel) + center[:, None, None, None]
    if interpolation == "nearest":
        idx = np.rint(q).astype(np.int64)
        inside = (
            (idx[0] >= 0) & (idx[0] < D)
            & (idx[1] >= 0) & (idx[1] < H)
            & (idx[2] >= 0) & (idx[2] < W)
        )
        sampled = np.where(
            inside,
            vol[np.clip(idx[0], 0, D - 1), np.clip(idx[1], 0, H - 1), np.clip(idx[2], 0, W - 1)],
            0.0,
        )
    else:
        sampled = _trilinear_sample(vol, q)
    return Volume3D(sampled.astype(np.float32), voxel_size=volume.voxel_size)


def _foreground_bbox(vol: np.ndarray):
    nz = np.nonzero(vol)
    if nz[0].size == 0:
        return None
    return [(int(axis.min()), int(axis.max())) for axis in nz]


def translate_volume(volume: Volume3D, shift: Sequence[int]) -> Volume3D:
    """Integer-voxel translation with zero fill (no wrap-around)."""
    vol = volume.voxels
    out = np.zeros_like(vol)
    src = []
    dst = []
    for ax, s in enumerate(shift):
        n = vol.shape[ax]
        s = int(s)
        if abs(s) >= n:
            return Volume3D(out, voxel_size=volume.voxel_size)
        if s >= 0:
            src.append(slice(0, n - s))
            dst.append(slice(s, n))
        else:
            src.append(slice(-s, n))
            dst.append(slice(0, n + s))
    out[tuple(dst)] = vol[tuple(src)]
    return Volume3D(out, voxel_size=volume.voxel_size)


def _safe_shift(rng, bbox, shape, max_translation):
    """Draw a shift in [-T, T]^3; if it would clip foreground, redraw inside
    the admissible range (and report that we did)."""
    lo_room = [bbox[ax][0] for ax in range(3)]
    hi_room = [shape[ax] - 1 - bbox[ax][1] for ax in range(3)]
    shift = rng.integers(-max_translation, max_translation + 1, size=3)
    clipped = False
    safe = []
    for ax in range(3):
        s = int(shift[ax])
        lo = -min(max_translation, lo_room[ax])
        hi = min(max_translation, hi_room[ax])
        if s < lo or s > hi:
            clipped = True
            s = int(rng.integers(lo, hi + 1))
        safe.append(s)
    if clipped:
        log.info(
            "translation %s would clip the foreground; redrew %s within bounds",
            tuple(int(v) for v in shift),
            tuple(safe),
        )
    return safe


def augment(volume: Volume3D, cfg: AugmentConfig, rng: np.random.Generator) -> Volume3D:
    """Apply rotation, translation, and additive Gaussian noise, each with
    its configured probability. Targets of the sample are untouched by
    construction: rigid transforms preserve them."""
    cfg.validate()
    out = volume

    if cfg.rotate_prob > 0 and rng.uniform() < cfg.rotate_prob:
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-9:
            axis = rng.normal(size=3)
        angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
        out = rotate_volume(out, axis, angle, interpolation=cfg.interpolation)

    if cfg.translate_prob > 0 and rng.uniform() < cfg.translate_prob:
        bbox = _foreground_bbox(out.voxels)
        if bbox is not None:
            shift = _safe_shift(rng, bbox, out.voxels.shape, cfg.max_translation)
            out = translate_volume(out, shift)

    if cfg.noise_prob > 0 and rng.uniform() < cfg.noise_prob:
        noisy = out.voxels + rng.normal(0.0, cfg.noise_sigma, size=out.voxels.shape)
        out = Volume3D(noisy.astype(np.float32), voxel_size=out.voxel_size)

    return out

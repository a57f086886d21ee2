"""Dataset assembly: volume files, the manifest, patient-wise splits.

On-disk layout of a generated dataset directory:

    volumes/<subject>_<scan>.mvol   one file per scan (MVOL format below)
    manifest.csv                    subject_id, scan_id, split, volume_path,
                                    then one column per measurement
    dataset.meta                    flat key = value sidecar (seed, dims,
                                    voxel size, measurement names/kinds)

MVOL volume file: 16-byte header (magic ``MVOL``, three little-endian
uint32 dims), then little-endian float32 voxels, D-major. Paths in the
manifest are relative to the manifest's directory.

Subjects carry 1-3 scans re-rendered with sub-percent parameter jitter,
so the split logic and the per-scan evaluation bookkeeping both get
exercised. Every (subject, scan) derives its own generator stream from
(master seed, subject index, scan index): output is identical no matter
the generation order.
"""
from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .kvfile import read_kv, write_kv
from .phantom import KIND_UNITS, Volume3D, generate_phantom, jitter_params, sample_params
from .validation import ValidationError

__all__ = [
    "SPLITS",
    "ScanRecord",
    "split_subjects",
    "write_volume",
    "read_volume",
    "write_manifest",
    "read_manifest",
    "build_dataset",
    "load_split",
    "measurement_kinds",
]

SPLITS = ("train", "validation", "test")
_MVOL_MAGIC = b"MVOL"


# ---------------------------------------------------------------------------
# Splitting


def split_subjects(
    subject_ids: Sequence,
    ratios: tuple[float, float, float] = (0.60, 0.15, 0.25),
    seed: int = 0,
) -> dict:
    """Assign whole subjects to train/validation/test.

    Counts come from largest-remainder apportionment (floor everything,
    hand remainders to the largest fractional parts, ties to the earlier
    split), so realized fractions sit within 1/n_subjects of the request
    and 40 subjects at (0.60, 0.15, 0.25) give exactly 24/6/10.
    """
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("subject ids must be unique")
    if len(ids) < len(SPLITS):
        raise ValidationError(
            f"need at least {len(SPLITS)} subjects to populate {len(SPLITS)} splits, got {len(ids)}"
        )
    if len(ratios) != len(SPLITS):
        raise ValidationError(f"expected {len(SPLITS)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be non-negative and sum to 1, got {ratios}")

    n = len(ids)
    exact = [r * n for r in ratios]
    counts = [math.floor(e) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for _ in range(n - sum(counts)):
        best = max(range(len(SPLITS)), key=lambda i: (remainders[i], -i))
        counts[best] += 1
        remainders[best] = -1.0

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = {}
    cursor = 0
    for split, count in zip(SPLITS, counts):
        for idx in order[cursor : cursor + count]:
            assignment[ids[int(idx)]] = split
        cursor += count
    return assignment


# ---------------------------------------------------------------------------
# Volume files


def write_volume(path, volume: Volume3D) -> None:
    D, H, W = volume.dims
    with open(path, "wb") as fh:
        fh.write(_MVOL_MAGIC)
        fh.write(struct.pack("<III", D, H, W))
        fh.write(np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes())


def read_volume(path, voxel_size: float = 1.0) -> Volume3D:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MVOL_MAGIC:
            raise ValidationError(f"{path}: not a volume file (magic {magic!r})")
        D, H, W = struct.unpack("<III", fh.read(12))
        raw = fh.read(4 * D * H * W)
        if len(raw) != 4 * D * H * W:
            raise ValidationError(f"{path}: truncated voxel payload")
        voxels = np.frombuffer(raw, dtype="<f4").reshape(D, H, W).astype(np.float32)
    return Volume3D(voxels, voxel_size=voxel_size)


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ScanRecord:
    subject_id: str
    scan_id: str
    split: str
    volume_path: str  # relative to the manifest directory
    targets: Mapping[str, float]


def measurement_kinds(names: Sequence[str]) -> tuple[str, ...]:
    """Kind of each measurement column, from its name prefix."""
    prefixes = {"vol": "volume", "thk": "thickness", "curv": "curvature"}
    kinds = []
    for name in names:
        prefix = name.split("_", 1)[0]
        if prefix not in prefixes:
            raise ValidationError(f"cannot infer measurement kind from column {name!r}")
        kinds.append(prefixes[prefix])
    return tuple(kinds)


def write_manifest(path, records: Sequence[ScanRecord], measurement_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "scan_id", "split", "volume_path", *measurement_names])
        for rec in records:
            writer.writerow(
                [rec.subject_id, rec.scan_id, rec.split, rec.volume_path]
                + [repr(float(rec.targets[name])) for name in measurement_names]
            )


def read_manifest(path) -> tuple[list[ScanRecord], list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["subject_id", "scan_id", "split", "volume_path"]:
            raise ValidationError(f"{path}: not a dataset manifest")
        names = header[4:]
        if not names:
            raise ValidationError(f"{path}: manifest has no measurement columns")
        records = []
        subject_split: dict[str, str] = {}
        for row in reader:
            subject, scan, split, vol_path = row[:4]
            if split not in SPLITS:
                raise ValidationError(f"{path}: unknown split {split!r} for scan {scan}")
            if subject_split.setdefault(subject, split) != split:
                raise ValidationError(
                    f"{path}: subject {subject!r} appears in more than one split"
                )
            targets = {n: float(v) for n, v in zip(names, row[4:])}
            records.append(ScanRecord(subject, scan, split, vol_path, targets))
    return records, names


# ---------------------------------------------------------------------------
# Generation


def build_dataset(
    out_dir,
    n_subjects: int,
    dims: tuple[int, int, int] = (32, 32, 32),
    voxel_size: float = 1.0,
    supersampling: int = 4,
    scans_per_subject: tuple[int, int] = (1, 3),
    ratios: tuple[float, float, float] = (0.60, 0.15, 0.25),
    seed: int = 0,
    force: bool = False,
) -> str:
    """Generate a dataset directory; returns the manifest path.

    Deterministic for a fixed seed: subject parameters, scan counts, scan
    jitter, and the split assignment all derive from it.
    """
    if n_subjects < len(SPLITS):
        raise ValidationError(
            f"need at least {len(SPLITS)} subjects, got {n_subjects}"
        )
    lo, hi = scans_per_subject
    if not 1 <= lo <= hi:
        raise ValidationError(f"scans_per_subject must satisfy 1 <= lo <= hi, got {scans_per_subject}")

    out_dir = os.fspath(out_dir)
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ValidationError(f"output directory {out_dir!r} is not empty (use --force)")
    os.makedirs(os.path.join(out_dir, "volumes"), exist_ok=True)

    subject_ids = [f"s{idx:04d}" for idx in range(n_subjects)]
    assignment = split_subjects(subject_ids, ratios=ratios, seed=seed)

    records: list[ScanRecord] = []
    names: Optional[list[str]] = None
    kinds: Optional[tuple[str, ...]] = None
    for idx, subject in enumerate(subject_ids):
        subject_rng = np.random.default_rng((seed, idx, 0xA))
        params = sample_params(subject_rng, dims=dims, voxel_size=voxel_size, supersampling=supersampling)
        n_scans = int(subject_rng.integers(lo, hi + 1))
        for scan_idx in range(n_scans):
            scan_rng = np.random.default_rng((seed, idx, scan_idx, 0xB))
            scan_params = jitter_params(params, scan_rng)
            volume, targets = generate_phantom(scan_params)
            if names is None:
                names = list(targets.names)
                kinds = targets.kinds
            scan_id = f"{subject}_{scan_idx:02d}"
            rel_path = os.path.join("volumes", f"{scan_id}.mvol")
            write_volume(os.path.join(out_dir, rel_path), volume)
            records.append(
                ScanRecord(
                    subject_id=subject,
                    scan_id=scan_id,
                    split=assignment[subject],
                    volume_path=rel_path,
                    targets=dict(zip(names, targets.values.tolist())),
                )
            )

    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest_path, records, names)

    meta = {
        "seed": seed,
        "n_subjects": n_subjects,
        "dims": "x".join(str(d) for d in dims),
        "voxel_size_mm": voxel_size,
        "supersampling": supersampling,
        "scans_per_subject": f"{lo}-{hi}",
        "ratios": "/".join(repr(r) for r in ratios),
        "n_measurements": len(names),
        "measurement_names": ",".join(names),
        "measurement_kinds": ",".join(kinds),
        "measurement_units": ",".join(KIND_UNITS[k] for k in kinds),
    }
    write_kv(os.path.join(out_dir, "dataset.meta"), meta)
    return manifest_path


def dataset_voxel_size(manifest_path) -> float:
    meta_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), "dataset.meta")
    if os.path.exists(meta_path):
        return float(read_kv(meta_path).get("voxel_size_mm", 1.0))
    return 1.0


def load_split(
    manifest_path,
    split: str,
    records: Optional[Iterable[ScanRecord]] = None,
    names: Optional[Sequence[str]] = None,
):
    """Load one split as arrays: X [N,1,D,H,W] float32, Y [N,M] float64.

    Returns (X, Y, names, records_of_split).
    """
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
    if records is None or names is None:
        records, names = read_manifest(manifest_path)
    voxel_size = dataset_voxel_size(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    chosen = [r for r in records if r.split == split]
    if not chosen:
        raise ValidationError(f"split {split!r} has no scans in {manifest_path}")
    volumes = []
    targets = []
    for rec in chosen:
        vol = read_volume(os.path.join(base, rec.volume_path), voxel_size=voxel_size)
        volumes.append(vol.voxels[None])
        targets.append([rec.targets[n] for n in names])
    X = np.stack(volumes).astype(np.float32)
    Y = np.asarray(targets, dtype=np.float64)
    return X, Y, list(names), chosen

"""Model checkpoint container.

Single binary file: magic ``MRCK`` + version, a length-prefixed JSON
header (network spec, parameter name -> shape table, optional target
scaler and metadata), then the raw little-endian float32 parameter
payloads concatenated in header order. Raw bytes in, raw bytes out, so
save -> load round-trips bit-exactly.
"""
from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .nn import ModelState, NetworkSpec
from .preprocessing import TargetMinMaxScaler
from .tape import Tensor
from .validation import ValidationError

__all__ = ["save_checkpoint", "load_checkpoint"]

_MAGIC = b"MRCK"
_VERSION = 1


def save_checkpoint(
    path,
    state: ModelState,
    scaler: Optional[TargetMinMaxScaler] = None,
    meta: Optional[dict] = None,
) -> None:
    header = {
        "network": state.spec.to_dict(),
        "params": [[name, list(t.shape)] for name, t in state.params.items()],
        "scaler": None if scaler is None else scaler.to_dict(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, tensor in state.params.items():
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (ModelState, scaler or None, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValidationError(f"{path}: not a model checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        spec = NetworkSpec.from_dict(header["network"])
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValidationError(f"{path}: truncated payload for parameter {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            params[name] = Tensor(arr, dtype=np.float32)
        trailing = fh.read(1)
        if trailing:
            raise ValidationError(f"{path}: unexpected trailing bytes")
    state = ModelState(spec, params, np.float32)
    scaler = None
    if header.get("scaler") is not None:
        scaler = TargetMinMaxScaler.from_dict(header["scaler"])
    return state, scaler, header.get("meta", {})

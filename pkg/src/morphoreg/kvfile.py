"""Flat ``key = value`` structured-text files (configs, dataset sidecars)."""
from __future__ import annotations

from .validation import ValidationError


def write_kv(path, mapping: dict) -> None:
    with open(path, "w") as fh:
        for key in mapping:
            value = mapping[key]
            fh.write(f"{key} = {value}\n")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ValidationError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out

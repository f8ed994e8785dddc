"""Flat binary archive of named 2-D float64 tensors.

Layout (all integers unsigned 64-bit little-endian)::

    b"PWCK" | version:u8 | count:u64
    repeated count times:
        name_len:u64 | name:utf-8 | rows:u64 | cols:u64 | rows*cols float64 LE
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PWCK"
VERSION = 1

_U64 = struct.Struct("<Q")


class CheckpointFormatError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, bytes([VERSION]), _U64.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise CheckpointFormatError(f"{name}: expected 2-D array, got shape {arr.shape}")
        raw = name.encode("utf-8")
        out += [_U64.pack(len(raw)), raw, _U64.pack(arr.shape[0]), _U64.pack(arr.shape[1])]
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointFormatError("bad magic; not a checkpoint file")
    if blob[4] != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {blob[4]}")
    pos = 5

    def u64() -> int:
        nonlocal pos
        (v,) = _U64.unpack_from(blob, pos)
        pos += 8
        return v

    try:
        count = u64()
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            n = u64()
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = u64(), u64()
            nbytes = rows * cols * 8
            if pos + nbytes > len(blob):
                raise CheckpointFormatError(f"{name}: truncated payload")
            arr = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos)
            tensors[name] = arr.reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - pos} trailing bytes after last entry")
    return tensors


def save(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def digest(tensors: Mapping[str, np.ndarray]) -> str:
    """SHA-256 of the serialised archive; equal digests mean bitwise-equal tensors."""
    return hashlib.sha256(dumps(tensors)).hexdigest()

"""Versioned binary parameter container.

Layout: the magic string "SERANN", a little-endian u16 format version, a u32
blob count, then per blob: u16 name length + UTF-8 name, a u8 dtype code
(0 = float32, 1 = float64), a u8 rank, u32 dims, and the raw little-endian
float data in C order. Blobs are written in sorted name order so identical
parameters always serialize to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"SERANN"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def save_checkpoint(path, blobs: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(blobs))]
    for name in sorted(blobs):
        arr = np.asarray(blobs[name])
        if arr.dtype not in _CODE_FOR_KIND:
            raise CheckpointError(
                f"blob {name!r} has unsupported dtype {arr.dtype}; use float32 or float64"
            )
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _CODE_FOR_KIND[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter container (bad magic)")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<H", raw, off)
    off += 2
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: blob {name!r} has unknown dtype code {code}")
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize, offset=off)
        off += nbytes
        blobs[name] = arr.reshape(shape).copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes after last blob")
    return blobs


def load_into(params: Mapping[str, Tensor], blobs: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint blobs into model parameters, names and shapes checked."""
    missing = sorted(set(params) - set(blobs))
    extra = sorted(set(blobs) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match checkpoint (missing={missing[:3]}, unexpected={extra[:3]})"
        )
    for name, tensor in params.items():
        blob = blobs[name]
        if tuple(blob.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"blob {name!r} shape {tuple(blob.shape)} does not match model shape {tuple(tensor.shape)}"
            )
        tensor.data = blob.astype(tensor.dtype, copy=True)

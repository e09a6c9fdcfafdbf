"""Standalone GTF writer/reader.

Deliberately duplicates the engine's container code: the two packages
interoperate through the byte format alone, never through a shared library.

Layout: magic "GTF1", uint32 LE tensor count, then per tensor: uint16 LE
name length, UTF-8 name, dtype byte (0 = float32), ndim byte, ndim uint64 LE
dims, row-major float32 LE payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GTF1"
DTYPE_FLOAT32 = 0


def write_gtf(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise ValueError(f"tensor '{name}' must be float32, got {arr.dtype}")
        name_bytes = name.encode("utf-8")
        out += struct.pack("<H", len(name_bytes))
        out += name_bytes
        out += struct.pack("<BB", DTYPE_FLOAT32, arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def read_gtf(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ValueError("not a GTF file")
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        dtype, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        if dtype != DTYPE_FLOAT32:
            raise ValueError(f"unsupported dtype code {dtype}")
        dims = struct.unpack_from(f"<{ndim}Q", data, pos) if ndim else ()
        pos += 8 * ndim
        n_elem = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n_elem, offset=pos).reshape(dims)
        pos += 4 * n_elem
        tensors[name] = arr.astype(np.float32, copy=True)
    return tensors


def write_gtf_file(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(write_gtf(tensors))


def read_gtf_file(path: str | Path) -> dict[str, np.ndarray]:
    return read_gtf(Path(path).read_bytes())

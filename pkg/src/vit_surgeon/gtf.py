"""GTF tensor container: a fixed little-endian layout for named float32 tensors.

Layout, byte for byte:

    magic         4 bytes, ASCII "GTF1"
    tensor_count  uint32 LE
    per tensor:
        name_len  uint16 LE
        name      UTF-8 bytes
        dtype     1 byte (0 = float32; nothing else defined)
        ndim      1 byte
        dims      ndim x uint64 LE
        payload   row-major float32 LE

Write -> read round-trips are bit-exact, which is what lets the offline
converter and this engine interoperate without sharing any code.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, TruncationError, UnsupportedError

MAGIC = b"GTF1"
DTYPE_FLOAT32 = 0


def write_gtf(tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]) -> bytes:
    """Serialize named float32 tensors in the order given."""
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    seen: set[str] = set()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(items))
    for name, arr in items:
        if name in seen:
            raise FormatError(f"duplicate tensor name '{name}'")
        seen.add(name)
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise FormatError(f"tensor '{name}' has dtype {arr.dtype}, GTF stores float32 only")
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise FormatError(f"tensor name too long ({len(name_bytes)} bytes)")
        out += struct.pack("<H", len(name_bytes))
        out += name_bytes
        out += struct.pack("<BB", DTYPE_FLOAT32, arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def read_gtf(data: bytes) -> dict[str, np.ndarray]:
    """Parse GTF bytes back into a name -> float32 array mapping (inverse of write_gtf)."""
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TruncationError(f"truncated GTF data while reading {what}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic: not a GTF file")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "tensor name")).decode("utf-8")
        if name in tensors:
            raise FormatError(f"duplicate tensor name '{name}'")
        dtype, ndim = struct.unpack("<BB", take(2, "dtype/ndim"))
        if dtype != DTYPE_FLOAT32:
            raise UnsupportedError(f"tensor '{name}' has unsupported dtype code {dtype}")
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim, "dims")) if ndim else ()
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = take(4 * n_elem, f"payload of '{name}'")
        arr = np.frombuffer(payload, dtype="<f4", count=n_elem).reshape(dims)
        tensors[name] = arr.astype(np.float32, copy=True)
    return tensors


def write_gtf_file(path: str | Path, tensors) -> None:
    Path(path).write_bytes(write_gtf(tensors))


def read_gtf_file(path: str | Path) -> dict[str, np.ndarray]:
    return read_gtf(Path(path).read_bytes())

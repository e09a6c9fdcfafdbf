"""Binary netpbm readers/writers: P6 (RGB images) and P5 (label/mask grids).

Only maxval <= 255 (one byte per sample) is supported; the engine never
needs 16-bit samples.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError, UnsupportedError


def _parse_header(data: bytes, expect_magic: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload_offset); skips '#' comments."""
    if data[:2] != expect_magic:
        raise FormatError(f"expected {expect_magic.decode()} file, got magic {data[:2]!r}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(data):
            raise TruncationError("netpbm header ended before width/height/maxval")
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif c.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise FormatError(f"unexpected byte {c!r} in netpbm header")
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after netpbm maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"bad netpbm dimensions {width}x{height}")
    if maxval < 1 or maxval > 255:
        raise UnsupportedError(f"netpbm maxval {maxval} not supported (need 1..255)")
    return width, height, maxval, pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 file into an [h, w, 3] uint8 array."""
    data = Path(path).read_bytes()
    width, height, _, pos = _parse_header(data, b"P6")
    need = width * height * 3
    if len(data) - pos < need:
        raise TruncationError(f"P6 payload truncated: need {need} bytes, have {len(data) - pos}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3).copy()


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary P5 file into an [h, w] uint8 array."""
    data = Path(path).read_bytes()
    width, height, _, pos = _parse_header(data, b"P5")
    need = width * height
    if len(data) - pos < need:
        raise TruncationError(f"P5 payload truncated: need {need} bytes, have {len(data) - pos}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width).copy()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an [h, w, 3] uint8 array as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"write_ppm expects [h, w, 3] uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write an [h, w] uint8 array as binary P5."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"write_pgm expects [h, w] uint8, got {image.shape} {image.dtype}")
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())

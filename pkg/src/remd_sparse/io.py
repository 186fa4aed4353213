"""File formats: binary PGM images and the dictionary container.

PGM (P5, maxval 255) is the bit-exact image interchange format; all
processing happens on float64 grids and quantization occurs only here.
The dictionary container is a small binary layout with a trailing
CRC-32 so silent corruption is always caught on load.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .grid import as_grid

DICT_MAGIC = b"REMDDICT"
DICT_VERSION = 1

__all__ = [
    "read_pgm",
    "write_pgm",
    "quantize",
    "write_imf",
    "save_dictionary",
    "load_dictionary",
]


# ------------------------------------------------------------------ PGM

def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines between header tokens
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PGM header")
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM into a float64 grid on the 0..255 scale."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if data[:2] != b"P5":
        raise FormatError(f"{path} is not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise FormatError(f"{path}: bad header token {tok!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1                      # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: raster truncated "
                          f"({len(raster)} of {width * height} bytes)")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64)


def quantize(image) -> np.ndarray:
    """Round half-to-even and clamp to the 8-bit range."""
    img = as_grid(image)
    return np.clip(np.rint(img), 0.0, 255.0).astype(np.uint8)


def write_pgm(path, image) -> None:
    """Write a grid as binary PGM, quantizing at this boundary only."""
    q = quantize(image)
    height, width = q.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + q.tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def write_imf(path, imf) -> float:
    """Write a signed field as PGM, mapping 0 to mid-gray.

    The affine map is (0.5 + v / (2 * maxabs)) * 255; the returned
    maxabs lets a reader undo it. A zero field maps to flat mid-gray.
    """
    field = as_grid(imf)
    maxabs = float(np.max(np.abs(field)))
    if maxabs == 0.0:
        scaled = np.full(field.shape, 0.5 * 255.0)
    else:
        scaled = (0.5 + field / (2.0 * maxabs)) * 255.0
    write_pgm(path, scaled)
    return maxabs


# ----------------------------------------------------------- dictionary

def save_dictionary(path, D0, B=None) -> None:
    """Serialize the base dictionary, and the tolerance matrix if given."""
    D0 = np.ascontiguousarray(np.asarray(D0, dtype=np.float64))
    if D0.ndim != 2 or D0.size == 0:
        raise DimensionError(f"dictionary must be a nonempty matrix, "
                             f"got shape {D0.shape}")
    n, K = D0.shape
    flags = 0
    payload = D0.astype("<f8").tobytes(order="C")
    if B is not None:
        B = np.ascontiguousarray(np.asarray(B, dtype=np.float64))
        if B.shape != (n, n):
            raise DimensionError(f"tolerance matrix must be {n}x{n}, "
                                 f"got {B.shape}")
        flags |= 1
        payload += B.astype("<f8").tobytes(order="C")
    header = DICT_MAGIC + struct.pack("<HIII", DICT_VERSION, n, K, flags)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    try:
        Path(path).write_bytes(header + payload + struct.pack("<I", crc))
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def load_dictionary(path):
    """Load (D0, B or None); any corruption raises FormatError."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    head = len(DICT_MAGIC) + struct.calcsize("<HIII")
    if len(data) < head + 4:
        raise FormatError(f"{path}: file too short for a dictionary")
    if data[:len(DICT_MAGIC)] != DICT_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    version, n, K, flags = struct.unpack_from("<HIII", data, len(DICT_MAGIC))
    if version != DICT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if n < 1 or K < 1:
        raise FormatError(f"{path}: bad dimensions n={n} K={K}")
    want = n * K * 8 + (n * n * 8 if flags & 1 else 0)
    if len(data) != head + want + 4:
        raise FormatError(f"{path}: payload length {len(data) - head - 4} "
                          f"does not match declared dimensions")
    payload = data[head:head + want]
    (crc,) = struct.unpack_from("<I", data, head + want)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch, file is corrupted")
    D0 = np.frombuffer(payload[:n * K * 8], dtype="<f8").reshape(n, K).copy()
    B = None
    if flags & 1:
        B = np.frombuffer(payload[n * K * 8:], dtype="<f8").reshape(n, n).copy()
    return D0, B

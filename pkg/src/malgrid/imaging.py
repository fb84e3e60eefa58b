"""Byte stream -> grayscale image conversion and network input preparation."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .tensor_core import DTYPE

INPUT_SIDE = 32

# (exclusive upper bound in bytes, width); the last band is open-ended
WIDTH_TABLE = ((10 * 1024, 32), (30 * 1024, 64), (None, 128))


class ImagingError(ValueError):
    pass


class PGMError(ImagingError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image; ``pixels`` is a ``(height, width)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImagingError(f"pixels must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ImagingError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"GrayImage(width={self.width}, height={self.height})"


def width_for_size(n_bytes: int) -> int:
    for bound, width in WIDTH_TABLE:
        if bound is None or n_bytes < bound:
            return width
    raise AssertionError("unreachable")


def bytes_to_image(payload: bytes) -> GrayImage:
    """Lay the payload out row-major at the table width, zero-padding the last row."""
    if len(payload) == 0:
        raise ImagingError("empty binary")
    width = width_for_size(len(payload))
    height = math.ceil(len(payload) / width)
    buf = np.zeros(width * height, dtype=np.uint8)
    buf[: len(payload)] = np.frombuffer(bytes(payload), dtype=np.uint8)
    return GrayImage(buf.reshape(height, width))


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped; identity when n_in == n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_to_input(img: GrayImage, side: int = INPUT_SIDE) -> GrayImage:
    """Bilinear resize to ``side x side`` with round-half-up and clamping."""
    if side < 1:
        raise ImagingError(f"side must be >= 1, got {side}")
    if img.height == side and img.width == side:
        return img
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _bilinear_axis(img.height, side)
    x0, x1, fx = _bilinear_axis(img.width, side)
    fy = fy[:, None]
    rows = src[y0] * (1.0 - fy) + src[y1] * fy
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    out = np.clip(np.floor(out + 0.5), 0, 255)
    return GrayImage(out.astype(np.uint8))


def normalize(img: GrayImage, side: int = INPUT_SIDE) -> np.ndarray:
    """Scale pixels to [0, 1] as a ``[side, side, 1]`` float tensor."""
    if img.height != side or img.width != side:
        raise ImagingError(f"expected a {side}x{side} image, got {img.width}x{img.height}")
    return (img.pixels.astype(DTYPE) / DTYPE(255.0)).reshape(side, side, 1)


def prepare_input(img: GrayImage, side: int = INPUT_SIDE) -> np.ndarray:
    return normalize(resize_to_input(img, side), side)


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def write_pgm(img: GrayImage, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))


def decode_pgm(data: bytes) -> GrayImage:
    """Parse a binary (P5) PGM with 8-bit samples. Comments in the header are skipped."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise PGMError(f"not a binary PGM (magic {tokens[0][:8]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PGMError("non-integer PGM header field") from None
    if width < 1 or height < 1:
        raise PGMError(f"invalid PGM dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise PGMError(f"unsupported PGM maxval {maxval} (8-bit only)")
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise PGMError("truncated PGM header")
    pos += 1
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise PGMError(f"PGM raster truncated: expected {width * height} bytes, got {len(raster)}")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        if px.max(initial=0) > maxval:
            raise PGMError("PGM sample exceeds maxval")
        px = np.floor(px.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    return GrayImage(px)


def read_pgm(path: str | os.PathLike) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_pgm(data)
    except PGMError as exc:
        raise PGMError(f"{os.fspath(path)}: {exc}") from None

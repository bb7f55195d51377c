"""Pixel-space value types, color conversion, resampling and PPM/PGM I/O."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class PPMError(ValueError):
    """Base class for netpbm decoding failures."""


class MalformedHeaderError(PPMError):
    pass


class TruncatedPayloadError(PPMError):
    pass


class UnsupportedMaxvalError(PPMError):
    pass


_GRID = float(2 ** 53)
_HALF_GUARD = 1e-9


def snap(px: np.ndarray) -> np.ndarray:
    """Round intensities to multiples of 2**-53.

    On this grid ``1 - x`` is exact for every x in [0, 1], so inversion is a
    bitwise involution. Values >= 0.5 are already on the grid.
    """
    return np.round(px * _GRID) / _GRID


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C grid of intensities in [0, 1], C being 1 (gray) or 3 (RGB).

    The pixel array is copied and marked read-only on construction.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected H x W x {{1,3}} pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(px)):
            raise ValueError("non-finite intensity")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]; use Image.from_array to clamp")
        object.__setattr__(self, "pixels", _frozen(snap(px)))

    @classmethod
    def from_array(cls, arr) -> "Image":
        """Build an image from arbitrary reals, clamping into [0, 1]."""
        arr = np.asarray(arr, dtype=np.float64)
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def constant(cls, width, height, value, channels=1) -> "Image":
        if np.ndim(value) == 0:
            value = [value] * channels
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, channels)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def data(self) -> np.ndarray:
        """Row-major interleaved intensities, length width*height*channels."""
        return self.pixels.reshape(-1)

    def plane(self, c: int) -> np.ndarray:
        return self.pixels[:, :, c]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width, height) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width, height) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def to_image(self) -> Image:
        return Image(self.bits.astype(np.float64))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))


# --- PPM / PGM --------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _read_header(buf: bytes):
    """Return (magic, width, height, maxval, payload offset)."""
    pos = 0
    tokens = []
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise MalformedHeaderError("unexpected end of header")
        tokens.append(buf[start:pos])
    if pos >= n or buf[pos] not in _WS:
        raise MalformedHeaderError("missing whitespace after maxval")
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise MalformedHeaderError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeaderError(f"non-integer header field: {exc}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (only 255)")
    return magic.decode(), width, height, maxval, pos + 1


def decode_ppm(buf: bytes) -> Image:
    magic, width, height, _, offset = _read_header(buf)
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"expected {need} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr.astype(np.float64) / 255.0)


def load_ppm(path) -> Image:
    """Read a binary P5 (gray) or P6 (RGB) file with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_ppm(buf)


def byte_levels(px) -> np.ndarray:
    """Round-half-up of intensity * 255 as int64 byte levels.

    The small guard keeps exact halves (0.1 * 255 = 25.5) rounding up after
    grid snapping has nudged them down by at most 255 * 2**-54.
    """
    return np.floor(np.asarray(px) * 255.0 + (0.5 + _HALF_GUARD)).astype(np.int64)


def quantize(img: Image) -> np.ndarray:
    """Bytes for ``img`` using round-half-up of intensity * 255."""
    return byte_levels(img.pixels).astype(np.uint8)


def encode_ppm(img: Image) -> bytes:
    magic = "P5" if img.channels == 1 else "P6"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + quantize(img).tobytes()


def save_ppm(img: Image, path) -> None:
    data = encode_ppm(img)
    with open(path, "wb") as fh:
        fh.write(data)


def netpbm_suffix(img: Image) -> str:
    return ".pgm" if img.channels == 1 else ".ppm"


# --- color and resampling ---------------------------------------------------


def to_gray_luma(img: Image) -> Image:
    """Rec. 601 luma. Single-channel input is returned unchanged."""
    if img.channels == 1:
        return img
    # integer weights over 1000 keep white exactly 1.0 and (1, 0, 0) exactly 0.299
    px = img.pixels
    gray = (299.0 * px[:, :, 0] + 587.0 * px[:, :, 1] + 114.0 * px[:, :, 2]) / 1000.0
    return Image.from_array(gray[:, :, None])


def to_rgb(img: Image) -> Image:
    if img.channels == 3:
        return img
    return Image(np.repeat(img.pixels, 3, axis=2))


def _source_coords(n_out, n_in):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img: Image, new_w: int, new_h: int) -> Image:
    """Bilinear resampling with half-pixel-centered sample positions."""
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be >= 1, got {new_w}x{new_h}")
    if (new_w, new_h) == (img.width, img.height):
        return img
    px = img.pixels
    x0, x1, fx = _source_coords(new_w, img.width)
    y0, y1, fy = _source_coords(new_h, img.height)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    a = px[y0][:, x0]
    b = px[y0][:, x1]
    c = px[y1][:, x0]
    d = px[y1][:, x1]
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return Image.from_array(top + fy * (bottom - top))


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


_SAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def safe_name(text: str) -> str:
    return _SAFE.sub("_", text)

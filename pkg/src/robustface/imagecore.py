"""Grayscale image substrate: PGM I/O, resampling, convolution, integral images.

Pixels live in row-major (height, width) float64 arrays. File loads scale
values to [0, 1]; computed images may leave that range and are quantized
back to bytes only when written out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Canonical face-chip side. 64x64 keeps the per-class dictionaries small
# enough (4096 x N_T doubles) to stay dense.
CHIP_SIZE = 64


class PgmError(ValueError):
    """Malformed PGM input."""


class PgmMagicError(PgmError):
    """Magic number is not P2 or P5."""


class PgmTruncatedError(PgmError):
    """Pixel payload ends before width*height samples."""


class PgmDimensionError(PgmError):
    """Header declares a zero or negative dimension."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable grayscale raster holding a read-only (height, width) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def constant(cls, width: int, height: int, value: float = 0.0) -> "GrayImage":
        return cls(np.full((height, width), value, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Kernel2D:
    """Odd-sized 2D filter. Blur kernels are non-negative and sum to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("kernel weights must be 2D")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ValueError(f"kernel dimensions must be odd, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def height(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Cumulative-sum table; entry (y, x) sums all pixels above and left of it."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
            raise ValueError("integral table must be (h+1, w+1)")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1

    def rect_sum(self, x0: int, y0: int, x1: int, y1: int) -> float:
        """Sum of pixels over the half-open rectangle [x0,x1) x [y0,y1)."""
        t = self.table
        return float(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])


class _Scanner:
    """Whitespace/comment-aware token scanner over PGM header bytes."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def next_token(self) -> bytes:
        data, n = self.data, len(self.data)
        i = self.pos
        while i < n:
            c = data[i]
            if c in b" \t\r\n":
                i += 1
            elif c == ord("#"):
                j = data.find(b"\n", i)
                i = n if j < 0 else j + 1
            else:
                break
        if i >= n:
            raise PgmTruncatedError("unexpected end of file in header")
        j = i
        while j < n and data[j] not in b" \t\r\n":
            j += 1
        self.pos = j
        return data[i:j]

    def next_int(self, what: str) -> int:
        tok = self.next_token()
        try:
            return int(tok)
        except ValueError:
            raise PgmError(f"expected integer for {what}, got {tok!r}") from None


def load_image(path) -> GrayImage:
    """Read a PGM file (P2 ascii or P5 binary, maxval <= 65535) scaled to [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P2", b"P5"):
        raise PgmMagicError(f"not a P2/P5 PGM file: magic {data[:2]!r}")
    binary = data[:2] == b"P5"
    scan = _Scanner(data, 2)
    width = scan.next_int("width")
    height = scan.next_int("height")
    if width <= 0 or height <= 0:
        raise PgmDimensionError(f"invalid dimensions {width}x{height}")
    maxval = scan.next_int("maxval")
    if not 1 <= maxval <= 65535:
        raise PgmError(f"maxval {maxval} out of range 1..65535")
    count = width * height

    if binary:
        # exactly one whitespace byte separates the header from the raster
        if scan.pos >= len(data) or data[scan.pos] not in b" \t\r\n":
            raise PgmTruncatedError("missing whitespace before binary raster")
        start = scan.pos + 1
        itemsize = 1 if maxval <= 255 else 2
        end = start + count * itemsize
        if end > len(data):
            raise PgmTruncatedError(
                f"raster needs {count * itemsize} bytes, found {len(data) - start}"
            )
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        samples = np.frombuffer(data[start:end], dtype=dtype).astype(np.float64)
    else:
        samples = np.empty(count, dtype=np.float64)
        for i in range(count):
            try:
                v = scan.next_int("pixel")
            except PgmTruncatedError:
                raise PgmTruncatedError(f"raster has {i} of {count} samples") from None
            samples[i] = v
    if samples.max(initial=0.0) > maxval:
        raise PgmError("sample value exceeds maxval")
    return GrayImage((samples / maxval).reshape(height, width))


def save_image(img: GrayImage, path) -> None:
    """Write a binary P5 PGM with maxval 255; values clamped then rounded half-up."""
    q = np.floor(np.clip(img.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def resize_bilinear(img: GrayImage, new_width: int, new_height: int) -> GrayImage:
    """Bilinear resample under align-corners sampling with edge clamping."""
    if new_width < 1 or new_height < 1:
        raise ValueError(f"target dimensions must be >= 1, got {new_width}x{new_height}")
    px = img.pixels
    h, w = px.shape

    def axis_coords(n_out, n_in):
        if n_out == 1:
            return np.full(1, (n_in - 1) / 2.0)
        return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)

    xs = axis_coords(new_width, w)
    ys = axis_coords(new_height, h)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0

    top = px[np.ix_(y0, x0)] * (1 - fx) + px[np.ix_(y0, x1)] * fx
    bot = px[np.ix_(y1, x0)] * (1 - fx) + px[np.ix_(y1, x1)] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return GrayImage(out)


def gaussian_kernel(sigma: float, radius: int | None = None) -> Kernel2D:
    """Normalized isotropic Gaussian; radius defaults to ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = max(1, math.ceil(3.0 * sigma))
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return Kernel2D(g / g.sum())


def shift_pixels(px: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by (dx, dy) with replicate-edge fill: out(x,y) = in(x-dx, y-dy)."""
    h, w = px.shape
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    return px[np.ix_(ys, xs)]


def convolve(img: GrayImage, kernel: Kernel2D) -> GrayImage:
    """Correlate with replicate-edge padding; output size equals input size.

    Implemented as a shift-and-accumulate over kernel taps so it shares the
    replicate convention used for dictionary columns exactly.
    """
    k = kernel.weights
    ry, rx = k.shape[0] // 2, k.shape[1] // 2
    px = img.pixels
    out = np.zeros_like(px)
    for v in range(k.shape[0]):
        for u in range(k.shape[1]):
            wgt = k[v, u]
            if wgt == 0.0:
                continue
            out += wgt * shift_pixels(px, rx - u, ry - v)
    return GrayImage(out)


def integral_image(img: GrayImage) -> IntegralImage:
    """Build the (h+1, w+1) summed-area table with a zero top row and left column."""
    h, w = img.pixels.shape
    table = np.zeros((h + 1, w + 1), dtype=np.float64)
    table[1:, 1:] = img.pixels.cumsum(axis=0).cumsum(axis=1)
    return IntegralImage(table)

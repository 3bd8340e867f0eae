"""Uniform-LBP block histograms and weighted chi-square matching.

Descriptors follow the classic face-LBP recipe: 8 neighbors at radius 1,
uniform binning into 59 bins, non-overlapping blocks over the image
interior, histograms concatenated in row-major block order. Per-block
weights emphasize the discriminative face regions (eye band highest).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import GrayImage

N_BINS = 59

# Neighbor order: top-left, then clockwise. First neighbor is the MSB.
_NEIGHBOR_OFFSETS = ((-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0))


def _circular_transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def _build_uniform_table() -> np.ndarray:
    table = np.full(256, N_BINS - 1, dtype=np.int64)
    uniform = [c for c in range(256) if _circular_transitions(c) <= 2]
    for bin_idx, code in enumerate(sorted(uniform)):
        table[code] = bin_idx
    return table


_UNIFORM_TABLE = _build_uniform_table()
_UNIFORM_TABLE.setflags(write=False)


@dataclass(frozen=True, eq=False)
class LBPDescriptor:
    """Concatenated per-block 59-bin histograms, row-major block order."""

    blocks_x: int
    blocks_y: int
    histograms: np.ndarray

    def __post_init__(self):
        hist = np.asarray(self.histograms, dtype=np.int64)
        if hist.shape != (self.blocks_x * self.blocks_y * N_BINS,):
            raise ValueError(
                f"histogram length {hist.shape} != {self.blocks_x}*{self.blocks_y}*{N_BINS}"
            )
        if hist.min(initial=0) < 0:
            raise ValueError("histogram bins must be non-negative")
        hist = hist.copy()
        hist.setflags(write=False)
        object.__setattr__(self, "histograms", hist)

    def block_histogram(self, bx: int, by: int) -> np.ndarray:
        i = (by * self.blocks_x + bx) * N_BINS
        return self.histograms[i : i + N_BINS]


@dataclass(frozen=True, eq=False)
class BlockWeightMap:
    """Non-negative per-block weights on the descriptor grid."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("block weights must be a 2D grid")
        if not np.all(np.isfinite(w)) or w.min() < 0:
            raise ValueError("block weights must be finite and non-negative")
        if not w.any():
            raise ValueError("block weights must not all be zero")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def blocks_x(self) -> int:
        return self.weights.shape[1]

    @property
    def blocks_y(self) -> int:
        return self.weights.shape[0]

    def to_pixel_weights(self, width: int, height: int) -> np.ndarray:
        """Broadcast block weights to a (height, width) per-pixel weight map."""
        bw = max(1, width // self.blocks_x)
        bh = max(1, height // self.blocks_y)
        cols = np.minimum(np.arange(width) // bw, self.blocks_x - 1)
        rows = np.minimum(np.arange(height) // bh, self.blocks_y - 1)
        return self.weights[np.ix_(rows, cols)]


def lbp_code(img: GrayImage, x: int, y: int) -> int:
    """8-bit code at (x, y): bit set iff neighbor >= center, MSB = top-left."""
    if not (1 <= x <= img.width - 2 and 1 <= y <= img.height - 2):
        raise ValueError(f"({x},{y}) is within 1 pixel of the border")
    px = img.pixels
    center = px[y, x]
    code = 0
    for dx, dy in _NEIGHBOR_OFFSETS:
        code = (code << 1) | (1 if px[y + dy, x + dx] >= center else 0)
    return code


def uniform_mapping(code: int) -> int:
    """Map an LBP code to its uniform bin; non-uniform codes share bin 58."""
    if not 0 <= code <= 255:
        raise ValueError(f"code {code} out of [0, 255]")
    return int(_UNIFORM_TABLE[code])


def _interior_codes(px: np.ndarray) -> np.ndarray:
    """Vectorized LBP codes for all interior pixels of a pixel array."""
    center = px[1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for dx, dy in _NEIGHBOR_OFFSETS:
        neighbor = px[1 + dy : px.shape[0] - 1 + dy, 1 + dx : px.shape[1] - 1 + dx]
        codes = (codes << 1) | (neighbor >= center)
    return codes


def extract_descriptor(img: GrayImage, blocks_x: int, blocks_y: int) -> LBPDescriptor:
    """Histogram mapped codes of the 1-pixel-margin interior per block.

    The interior splits into blocks_x * blocks_y rectangles; remainder
    pixels attach to the last row/column of blocks.
    """
    if blocks_x < 1 or blocks_y < 1:
        raise ValueError("block grid must be at least 1x1")
    wi, hi = img.width - 2, img.height - 2
    if wi // blocks_x < 3 or hi // blocks_y < 3:
        raise ValueError(
            f"grid {blocks_x}x{blocks_y} too fine for {img.width}x{img.height} image"
        )
    bins = _UNIFORM_TABLE[_interior_codes(img.pixels)]
    bw, bh = wi // blocks_x, hi // blocks_y
    col_block = np.minimum(np.arange(wi) // bw, blocks_x - 1)
    row_block = np.minimum(np.arange(hi) // bh, blocks_y - 1)
    block_id = row_block[:, None] * blocks_x + col_block[None, :]
    flat = block_id * N_BINS + bins
    counts = np.bincount(flat.ravel(), minlength=blocks_x * blocks_y * N_BINS)
    return LBPDescriptor(blocks_x, blocks_y, counts)


def descriptor_distance(a: LBPDescriptor, b: LBPDescriptor, w: BlockWeightMap) -> float:
    """Weighted chi-square: sum over blocks of w * sum (a-b)^2/(a+b), 0/0 -> 0."""
    if (a.blocks_x, a.blocks_y) != (b.blocks_x, b.blocks_y):
        raise ValueError("descriptor grids differ")
    if (w.blocks_x, w.blocks_y) != (a.blocks_x, a.blocks_y):
        raise ValueError("weight grid does not match descriptor grid")
    ha = a.histograms.reshape(-1, N_BINS).astype(np.float64)
    hb = b.histograms.reshape(-1, N_BINS).astype(np.float64)
    diff2 = (ha - hb) ** 2
    denom = ha + hb
    terms = np.divide(diff2, denom, out=np.zeros_like(diff2), where=denom > 0)
    return float(w.weights.ravel() @ terms.sum(axis=1))


def default_weight_map(blocks_x: int, blocks_y: int) -> BlockWeightMap:
    """Fixed face layout: eye band 4, nose/mouth band 2, periphery 1, bottom corners 0."""
    if blocks_x < 4 or blocks_y < 4:
        raise ValueError(f"grid must be at least 4x4, got {blocks_x}x{blocks_y}")
    grid = np.ones((blocks_y, blocks_x), dtype=np.float64)
    for row in range(blocks_y):
        frac = (row + 0.5) / blocks_y
        if 0.20 <= frac < 0.45:
            grid[row, :] = 4.0
        elif 0.45 <= frac < 0.80:
            grid[row, :] = 2.0
    grid[blocks_y - 1, 0] = 0.0
    grid[blocks_y - 1, blocks_x - 1] = 0.0
    return BlockWeightMap(grid)


def save_weight_map(w: BlockWeightMap, path) -> None:
    """Text grid: `blocks_x blocks_y` then blocks_y rows of weights."""
    lines = [f"{w.blocks_x} {w.blocks_y}"]
    for row in w.weights:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_weight_map(path) -> BlockWeightMap:
    tokens = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) < 2:
        raise ValueError("weight map file missing header")
    bx, by = int(tokens[0]), int(tokens[1])
    values = [float(t) for t in tokens[2:]]
    if len(values) != bx * by:
        raise ValueError(f"expected {bx * by} weights, found {len(values)}")
    return BlockWeightMap(np.array(values, dtype=np.float64).reshape(by, bx))


def descriptor_to_csv(desc: LBPDescriptor) -> str:
    """One CSV row per block, 59 bin-count columns."""
    rows = desc.histograms.reshape(-1, N_BINS)
    return "\n".join(",".join(str(int(v)) for v in row) for row in rows) + "\n"

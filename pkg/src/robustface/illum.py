"""Nine-dimensional harmonic lighting model.

A Lambertian face under arbitrary distant lighting lies close to the span
of nine basis images: the albedo modulated by the real spherical harmonics
of order <= 2 evaluated at the per-pixel surface normal. Without subject
shape data, a generic dome (ellipsoid-cap) normal map stands in for every
face.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .imagecore import CHIP_SIZE, GrayImage

if TYPE_CHECKING:
    from .tsfopt import WeightMatrix

# Real spherical harmonic normalization constants, orders 0..2.
SH_C0 = 0.28209479177387814  # 1/(2 sqrt(pi))
SH_C1 = 0.4886025119029199  # sqrt(3/(4 pi))
SH_C2 = 1.0925484305920792  # sqrt(15/(4 pi))
SH_C3 = 0.31539156525252005  # sqrt(5/(16 pi))
SH_C4 = 0.5462742152960396  # sqrt(15/(16 pi))

N_BASIS = 9

# Fraction of the chip half-width covered by the dome; keeps the cap height
# strictly positive out to the corners.
_DOME_SPAN = 0.66

# Diagonal damping for the 9x9 normal equations; frontal normals zero out
# two harmonics, so the system can be rank-deficient.
_FIT_DAMPING = 1e-8


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Unit, front-facing surface normals as an (h, w, 3) array of (nx, ny, nz)."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"normals must be (h, w, 3), got {v.shape}")
        norms = np.linalg.norm(v, axis=2)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("normals must have unit length")
        if v[:, :, 2].min() < 0:
            raise ValueError("normals must be front-facing (nz >= 0)")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class BasisSet:
    """The nine harmonic basis images, stacked as a (9, h, w) array."""

    images: np.ndarray

    def __post_init__(self):
        im = np.array(self.images, dtype=np.float64)
        if im.ndim != 3 or im.shape[0] != N_BASIS:
            raise ValueError(f"basis must be ({N_BASIS}, h, w), got {im.shape}")
        if not np.all(np.isfinite(im)):
            raise ValueError("basis images must be finite")
        im.setflags(write=False)
        object.__setattr__(self, "images", im)

    @property
    def width(self) -> int:
        return self.images.shape[2]

    @property
    def height(self) -> int:
        return self.images.shape[1]


@dataclass(frozen=True, eq=False)
class IllumCoeffs:
    """Nine linear lighting coefficients."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (N_BASIS,):
            raise ValueError(f"coefficients must have shape ({N_BASIS},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficients must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Evaluate the nine real SH polynomials at unit vectors; (..., 3) -> (..., 9).

    Order: constant; nx, ny, nz; nx*ny, nx*nz, ny*nz, 3nz^2-1, nx^2-ny^2.
    """
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (N_BASIS,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = SH_C1 * x
    out[..., 2] = SH_C1 * y
    out[..., 3] = SH_C1 * z
    out[..., 4] = SH_C2 * x * y
    out[..., 5] = SH_C2 * x * z
    out[..., 6] = SH_C2 * y * z
    out[..., 7] = SH_C3 * (3.0 * z * z - 1.0)
    out[..., 8] = SH_C4 * (x * x - y * y)
    return out


def harmonic_basis(albedo: GrayImage, normals: NormalMap) -> BasisSet:
    """Nine basis images b_i = albedo * Y_i(normal), pixelwise."""
    if (albedo.height, albedo.width) != (normals.height, normals.width):
        raise ValueError(
            f"albedo {albedo.width}x{albedo.height} and normals "
            f"{normals.width}x{normals.height} differ"
        )
    sh = sh_basis(normals.vectors)
    return BasisSet(np.moveaxis(sh, -1, 0) * albedo.pixels[None, :, :])


def default_normal_map(width: int = CHIP_SIZE, height: int = CHIP_SIZE) -> NormalMap:
    """Generic face shape: normals of an ellipsoid cap centered on the chip."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    u = _DOME_SPAN * (2.0 * xs - (width - 1)) / (width - 1)
    v = _DOME_SPAN * (2.0 * ys - (height - 1)) / (height - 1)
    uu, vv = np.meshgrid(u, v)
    zz = np.sqrt(1.0 - uu * uu - vv * vv)
    n = np.stack([uu / zz, vv / zz, np.ones_like(zz)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n)


def linear_combination(basis: BasisSet, coeffs: IllumCoeffs) -> np.ndarray:
    """Unclamped pixelwise sum of alpha_i * b_i (the solver-side model)."""
    return np.tensordot(coeffs.values, basis.images, axes=1)


def relight(basis: BasisSet, coeffs: IllumCoeffs) -> GrayImage:
    """Relit image: the linear combination with negatives clamped to zero."""
    return GrayImage(np.maximum(linear_combination(basis, coeffs), 0.0))


def fit_illumination(probe: GrayImage, basis: BasisSet, weights: "WeightMatrix") -> IllumCoeffs:
    """Least-squares lighting coefficients minimizing ||W(p - sum alpha_i b_i)||^2.

    Solved via the damped 9x9 normal equations, so a rank-deficient basis
    (e.g. frontal normals that zero two harmonics) still yields a finite fit.
    """
    if (probe.height, probe.width) != (basis.height, basis.width):
        raise ValueError("probe and basis dimensions differ")
    w = weights.values
    if w.shape[0] != probe.width * probe.height:
        raise ValueError("weight vector length does not match image")
    bw = basis.images.reshape(N_BASIS, -1) * w[None, :]
    pw = probe.pixels.ravel() * w
    gram = bw @ bw.T + _FIT_DAMPING * np.eye(N_BASIS)
    return IllumCoeffs(np.linalg.solve(gram, bw @ pw))


def save_normal_map(normals: NormalMap, path) -> None:
    """Plain-text planes (nx, ny, nz) with full float precision; round-trips bit-exactly."""
    lines = [f"NM {normals.width} {normals.height}"]
    for plane in range(3):
        for row in normals.vectors[:, :, plane]:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_normal_map(path) -> NormalMap:
    tokens = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) < 3 or tokens[0] != "NM":
        raise ValueError("not a normal-map file (missing NM header)")
    w, h = int(tokens[1]), int(tokens[2])
    values = [float(t) for t in tokens[3:]]
    if len(values) != 3 * w * h:
        raise ValueError(f"expected {3 * w * h} values, found {len(values)}")
    planes = np.array(values, dtype=np.float64).reshape(3, h, w)
    return NormalMap(np.stack([planes[0], planes[1], planes[2]], axis=-1))

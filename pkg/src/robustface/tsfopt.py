"""Transformation-spread-function optimization.

Blur is modeled as a non-negative weighting T over translated copies of a
gallery image: stacking the translated copies as columns of a dictionary A
makes the blurred image A @ T. Fitting a probe then becomes a weighted
non-negative L1-regularized least squares

    minimize  ||W (p - A T)||^2 + beta ||T||_1   subject to  T >= 0,

solved with accelerated proximal gradient (FISTA) using the combined
prox max(0, x - beta * step) and a monotone restart. Joint blur plus
illumination alternates that solve with a 9-coefficient lighting fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .illum import N_BASIS, BasisSet, IllumCoeffs, NormalMap, harmonic_basis, relight
from .imagecore import GrayImage, shift_pixels

_POWER_ITERS = 20
_FIT_DAMPING = 1e-8


@dataclass(frozen=True)
class TransformSet:
    """Integer 2D translations {(dx, dy) : |dx|,|dy| <= radius}, (0,0) included."""

    offsets: tuple[tuple[int, int], ...]
    radius: int

    def __post_init__(self):
        if len(set(self.offsets)) != len(self.offsets):
            raise ValueError("duplicate offsets")
        if (0, 0) not in self.offsets:
            raise ValueError("transform set must contain the identity (0, 0)")
        for dx, dy in self.offsets:
            if abs(dx) > self.radius or abs(dy) > self.radius:
                raise ValueError(f"offset ({dx},{dy}) exceeds radius {self.radius}")

    @classmethod
    def square(cls, radius: int) -> "TransformSet":
        if radius < 0:
            raise ValueError("radius must be >= 0")
        offsets = tuple(
            (dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
        )
        return cls(offsets, radius)

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def identity_index(self) -> int:
        return self.offsets.index((0, 0))


@dataclass(frozen=True, eq=False)
class TSF:
    """Non-negative weights over a transform set."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("TSF weights must be a vector")
        if not np.all(np.isfinite(w)) or w.min(initial=0.0) < 0:
            raise ValueError("TSF weights must be finite and non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def one_hot(cls, ts: TransformSet, offset: tuple[int, int] = (0, 0)) -> "TSF":
        w = np.zeros(len(ts))
        w[ts.offsets.index(offset)] = 1.0
        return cls(w)


@dataclass(frozen=True, eq=False)
class DictionaryMatrix:
    """Dense N x N_T matrix whose column j is the image under transform j."""

    matrix: np.ndarray
    width: int
    height: int
    transforms: TransformSet

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (self.width * self.height, len(self.transforms)):
            raise ValueError(
                f"matrix shape {m.shape} != ({self.width * self.height}, {len(self.transforms)})"
            )
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Per-pixel non-negative weights, stored as a flat length-N vector."""

    values: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if v.shape[0] != self.width * self.height:
            raise ValueError("weight length does not match dimensions")
        if not np.all(np.isfinite(v)) or v.min() < 0:
            raise ValueError("weights must be finite and non-negative")
        if not v.any():
            raise ValueError("weights must not all be zero")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def ones(cls, width: int, height: int) -> "WeightMatrix":
        return cls(np.ones(width * height), width, height)

    @classmethod
    def from_pixels(cls, weights: np.ndarray) -> "WeightMatrix":
        weights = np.asarray(weights, dtype=np.float64)
        return cls(weights.ravel(), weights.shape[1], weights.shape[0])

    def image(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the non-negative lasso and the alternating joint solve.

    beta None picks the scale-aware default 1e-3 * max|A^T W^2 p| so the
    penalty is dimensionless with respect to image intensity.
    """

    beta: float | None = None
    max_iters: int = 200
    rel_tol: float = 1e-7
    outer_iters: int = 9

    def __post_init__(self):
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")


class JointFit(NamedTuple):
    """Result of the alternating blur+illumination solve."""

    tsf: TSF
    coeffs: IllumCoeffs
    residual: float
    objectives: tuple[float, ...]


def _shift_columns(px: np.ndarray, ts: TransformSet) -> np.ndarray:
    cols = np.empty((px.size, len(ts)), dtype=np.float64)
    for j, (dx, dy) in enumerate(ts.offsets):
        cols[:, j] = shift_pixels(px, dx, dy).ravel()
    return cols


def build_dictionary(img: GrayImage, ts: TransformSet) -> DictionaryMatrix:
    """Stack every translated copy of the image (replicate-edge fill) as columns."""
    if ts.radius >= min(img.width, img.height) / 2:
        raise ValueError(
            f"radius {ts.radius} too large for {img.width}x{img.height} image"
        )
    return DictionaryMatrix(_shift_columns(img.pixels, ts), img.width, img.height, ts)


def apply_tsf(img: GrayImage, tsf: TSF, ts: TransformSet) -> GrayImage:
    """Weighted sum of translated copies; equals reshape(A @ T)."""
    if tsf.weights.shape[0] != len(ts):
        raise ValueError(f"TSF length {tsf.weights.shape[0]} != transform count {len(ts)}")
    out = np.zeros_like(img.pixels)
    for j, (dx, dy) in enumerate(ts.offsets):
        w = tsf.weights[j]
        if w != 0.0:
            out += w * shift_pixels(img.pixels, dx, dy)
    return GrayImage(out)


def _default_beta(aw: np.ndarray, pw: np.ndarray) -> float:
    return 1e-3 * float(np.abs(aw.T @ pw).max(initial=0.0))


def _spectral_norm_sq(aw: np.ndarray) -> float:
    """Power-method estimate of ||aw||_2^2 (largest eigenvalue of aw^T aw)."""
    n = aw.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(_POWER_ITERS):
        u = aw.T @ (aw @ v)
        lam = float(np.linalg.norm(u))
        if lam == 0.0:
            return 0.0
        v = u / lam
    return lam


def _fista(
    aw: np.ndarray,
    pw: np.ndarray,
    beta: float,
    max_iters: int,
    rel_tol: float,
    t0: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Non-negative lasso min ||aw x - pw||^2 + beta sum(x), x >= 0.

    Accelerated proximal gradient with a monotone restart: a candidate that
    would raise the objective is recomputed as a plain proximal step from
    the current iterate (doubling the Lipschitz estimate if even that
    fails), so the objective never increases.

    Returns (x, objective at x).
    """

    def objective(x: np.ndarray) -> float:
        r = aw @ x - pw
        return float(r @ r + beta * x.sum())

    n = aw.shape[1]
    x = np.zeros(n) if t0 is None else np.array(t0, dtype=np.float64)
    lam = _spectral_norm_sq(aw)
    if lam == 0.0:
        # degenerate operator: the data term is constant, so x = 0 minimizes
        return np.zeros(n), objective(np.zeros(n))
    lips = 2.0 * lam * 1.02  # slack over the power-method estimate
    y = x.copy()
    t_acc = 1.0
    f_x = objective(x)
    for _ in range(max_iters):
        grad_y = 2.0 * (aw.T @ (aw @ y - pw))
        z = np.maximum(0.0, y - (grad_y + beta) / lips)
        f_z = objective(z)
        if f_z > f_x:
            # restart from x; back off the step until it is a descent step
            while True:
                grad_x = 2.0 * (aw.T @ (aw @ x - pw))
                z = np.maximum(0.0, x - (grad_x + beta) / lips)
                f_z = objective(z)
                if f_z <= f_x or lips > 1e18 * lam:
                    break
                lips *= 2.0
            t_acc = 1.0
            if f_z > f_x:
                z, f_z = x, f_x
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        y = z + ((t_acc - 1.0) / t_next) * (z - x)
        converged = abs(f_x - f_z) <= rel_tol * max(1.0, abs(f_x))
        x, f_x, t_acc = z, f_z, t_next
        if converged:
            break
    return x, f_x


def solve_tsf(
    probe: GrayImage,
    dictionary: DictionaryMatrix,
    weights: WeightMatrix,
    cfg: SolverConfig = SolverConfig(),
    t0: TSF | None = None,
) -> tuple[TSF, float]:
    """Fit the probe as a non-negative blur combination of dictionary columns.

    Returns the TSF and the weighted quadratic residual ||W(p - A T)||^2.
    """
    n = dictionary.width * dictionary.height
    if probe.width * probe.height != n:
        raise ValueError("probe size does not match dictionary")
    if weights.values.shape[0] != n:
        raise ValueError("weight size does not match dictionary")
    w = weights.values
    aw = dictionary.matrix * w[:, None]
    pw = probe.pixels.ravel() * w
    beta = cfg.beta if cfg.beta is not None else _default_beta(aw, pw)
    start = None if t0 is None else t0.weights
    x, _ = _fista(aw, pw, beta, cfg.max_iters, cfg.rel_tol, start)
    r = aw @ x - pw
    return TSF(x), float(r @ r)


def solve_joint(
    probe: GrayImage,
    basis: BasisSet,
    ts: TransformSet,
    weights: WeightMatrix,
    cfg: SolverConfig = SolverConfig(),
) -> JointFit:
    """Alternating minimization of the joint blur + illumination objective.

    Each outer round holds T fixed (initially one-hot at (0,0)) to fit the
    lighting coefficients by damped weighted least squares against the
    T-blurred basis, then rebuilds the dictionary of the relit image and
    re-solves for T warm-started from the previous round. Updates that
    would raise the objective are rejected, so the recorded round-by-round
    objective values never increase.
    """
    n = basis.width * basis.height
    if probe.width * probe.height != n:
        raise ValueError("probe size does not match basis")
    if weights.values.shape[0] != n:
        raise ValueError("weight size does not match basis")
    w = weights.values
    pw = probe.pixels.ravel() * w
    basis_cols = np.stack([_shift_columns(b, ts) for b in basis.images])  # (9, N, N_T)

    def data_term(alpha_v: np.ndarray, t_v: np.ndarray) -> float:
        r = np.tensordot(alpha_v, basis_cols @ t_v, axes=1) * w - pw
        return float(r @ r)

    t_cur = TSF.one_hot(ts).weights
    alpha = None
    beta = cfg.beta
    objectives = []
    for _ in range(cfg.outer_iters):
        # (a) lighting fit with T held fixed
        blurred = basis_cols @ t_cur  # (9, N)
        bw = blurred * w[None, :]
        gram = bw @ bw.T + _FIT_DAMPING * np.eye(N_BASIS)
        candidate = np.linalg.solve(gram, bw @ pw)
        if alpha is None or data_term(candidate, t_cur) <= data_term(alpha, t_cur):
            alpha = candidate
        # (b) blur fit with the relit dictionary, warm-started at current T
        a_cur = np.tensordot(alpha, basis_cols, axes=1)  # (N, N_T)
        aw = a_cur * w[:, None]
        if beta is None:
            beta = _default_beta(aw, pw)
        t_cur, f_cur = _fista(aw, pw, beta, cfg.max_iters, cfg.rel_tol, t_cur)
        objectives.append(f_cur)
    residual = data_term(alpha, t_cur)
    return JointFit(TSF(t_cur), IllumCoeffs(alpha), residual, tuple(objectives))


def transform_gallery(
    g: GrayImage,
    tsf: TSF,
    coeffs: IllumCoeffs,
    ts: TransformSet,
    normals: NormalMap,
) -> GrayImage:
    """Relight the gallery image with the fitted coefficients, then blur it."""
    return apply_tsf(relight(harmonic_basis(g, normals), coeffs), tsf, ts)

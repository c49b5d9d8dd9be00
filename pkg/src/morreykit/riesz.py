"""Riesz potentials, ball means, mean oscillation and the maximal function.

The discrete Riesz potential of a cell field is the midpoint sum

    (I_a f)(x) = sum_y f(y) k(x - y) * cell_volume,   k(d) = |d|^(a - n),

with the singular self-cell term replaced by the exact mean of the kernel
over one cell.  Two evaluation routes compute the same sum: an explicit
pairwise loop and a zero-padded FFT convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft, integrate as sintegrate
from scipy.special import gamma as Gamma

from .field import BallFamily, Grid, ScalarField, ball_sums

OVERFLOW_LIMIT = 1e150


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


@dataclass(frozen=True)
class RieszKernelSpec:
    """Order ``alpha`` in (0, n) and the rule used on the kernel singularity.

    ``rule="cell-mean"`` (with ``rho=0``) replaces the self-cell weight by the
    exact cell mean of |y|^(alpha-n).  ``rule="ball-mean"`` replaces every
    offset with |d| < rho by the mean of the kernel over B(0, rho), which is
    ``n * rho**(alpha - n) / alpha``.
    """

    alpha: float
    rho: float = 0.0
    rule: str = "cell-mean"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.rule not in ("cell-mean", "ball-mean"):
            raise ValueError(f"unknown regularization rule {self.rule!r}")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.rule == "ball-mean" and self.rho == 0:
            raise ValueError("ball-mean rule needs rho > 0")

    def validate(self, grid: Grid):
        if not 0 < self.alpha < grid.n:
            raise ValueError(f"alpha must lie in (0, {grid.n}), got {self.alpha}")
        if self.rho != 0 and self.rho < 0.5 * grid.cell_diagonal * (1 - 1e-12):
            raise ValueError(
                f"rho must be 0 or at least half the cell diagonal ({0.5 * grid.cell_diagonal:g})"
            )


def box_kernel_integral(lo, hi, alpha: float) -> float:
    """Integral of |y|^(alpha-n) over the box [lo, hi], which must contain 0.

    The box is split into one pyramid per face with apex at the origin.  On
    the pyramid over the face {y_k = a} the radial integral is explicit and
    leaves the smooth face integral (a / alpha) * int (a^2 + |w|^2)^((alpha-n)/2) dw.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = len(lo)
    if np.any(lo > 0) or np.any(hi < 0):
        raise ValueError("box must contain the origin")
    e = (alpha - n) / 2
    total = 0.0
    for k in range(n):
        others = [j for j in range(n) if j != k]
        for a in (hi[k], -lo[k]):
            if a <= 0:
                continue
            if n == 2:
                j = others[0]
                val, _ = sintegrate.quad(
                    lambda w: (a * a + w * w) ** e, lo[j], hi[j], epsabs=0, epsrel=1e-12, limit=200
                )
            else:
                j1, j2 = others
                val, _ = sintegrate.dblquad(
                    lambda w2, w1: (a * a + w1 * w1 + w2 * w2) ** e,
                    lo[j1],
                    hi[j1],
                    lo[j2],
                    hi[j2],
                    epsabs=0,
                    epsrel=1e-11,
                )
            total += a / alpha * val
    return total


@lru_cache(maxsize=64)
def self_cell_mean(spacing: tuple[float, ...], alpha: float) -> float:
    """Mean of |y|^(alpha-n) over one cell centered at the origin."""
    h = np.asarray(spacing)
    return box_kernel_integral(-h / 2, h / 2, alpha) / float(np.prod(h))


def _kernel_values(d: np.ndarray, spec: RieszKernelSpec, n: int, spacing) -> np.ndarray:
    """Kernel weights for offset vectors ``d`` (last axis = components)."""
    r = np.linalg.norm(d, axis=-1)
    with np.errstate(divide="ignore"):
        k = r ** (spec.alpha - n)
    if spec.rule == "cell-mean":
        k[r == 0] = self_cell_mean(tuple(float(s) for s in spacing), spec.alpha)
    else:
        k[r < spec.rho] = n * spec.rho ** (spec.alpha - n) / spec.alpha
    return k


class RieszOperator:
    """Precomputed FFT plan for I_alpha on one grid.  Immutable once built."""

    def __init__(self, grid: Grid, spec: RieszKernelSpec):
        spec.validate(grid)
        self.grid = grid
        self.spec = spec
        n = grid.n
        offsets = np.meshgrid(
            *[np.arange(-(s - 1), s) * grid.spacing[k] for k, s in enumerate(grid.shape)], indexing="ij"
        )
        kernel = _kernel_values(np.stack(offsets, axis=-1), spec, n, grid.spacing)
        self._fshape = tuple(fft.next_fast_len(2 * s - 1, real=True) for s in grid.shape)
        self._khat = fft.rfftn(kernel * grid.cell_volume, self._fshape)
        self._crop = tuple(slice(s - 1, 2 * s - 1) for s in grid.shape)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """I_alpha of a cell array (zero-extended), evaluated at every cell."""
        out = fft.irfftn(fft.rfftn(values, self._fshape) * self._khat, self._fshape)
        return out[self._crop]

    __call__ = apply


@lru_cache(maxsize=32)
def riesz_operator(grid: Grid, spec: RieszKernelSpec) -> RieszOperator:
    return RieszOperator(grid, spec)


def _check_magnitude(f: ScalarField):
    if f.max_abs() > OVERFLOW_LIMIT:
        raise OverflowError(f"field magnitude {f.max_abs():.3g} exceeds {OVERFLOW_LIMIT:g}")


def riesz_potential(f: ScalarField, spec: RieszKernelSpec | float, method: str = "fast") -> ScalarField:
    """Discrete Riesz potential of ``f`` on the masked cells.

    ``method="direct"`` loops over source/target pairs explicitly and is
    meant for small grids; ``"fast"`` convolves with the zero-padded
    kernel.  Both compute the same sum.
    """
    if not isinstance(spec, RieszKernelSpec):
        spec = RieszKernelSpec(float(spec))
    grid = f.grid
    spec.validate(grid)
    _check_magnitude(f)
    if method == "fast":
        out = riesz_operator(grid, spec).apply(f.values)
    elif method == "direct":
        out = np.zeros(grid.shape)
        out[grid.mask] = _direct_sum(grid.points, f.masked, grid.points, spec, grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ScalarField(grid, out)


def _direct_sum(src, vals, targets, spec, grid, chunk=256):
    out = np.empty(len(targets))
    for s in range(0, len(targets), chunk):
        t = targets[s : s + chunk]
        k = _kernel_values(t[:, None, :] - src[None, :, :], spec, grid.n, grid.spacing)
        out[s : s + chunk] = k @ vals
    return out * grid.cell_volume


def potential_at(f: ScalarField, spec: RieszKernelSpec | float, points) -> np.ndarray:
    """I_alpha f at arbitrary points.

    Cells whose closed box contains the evaluation point are integrated
    exactly (kernel times the constant cell value); all others use the
    midpoint rule.
    """
    if not isinstance(spec, RieszKernelSpec):
        spec = RieszKernelSpec(float(spec))
    grid = f.grid
    spec.validate(grid)
    _check_magnitude(f)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    src, vals, h = grid.points, f.masked, grid.spacing
    out = np.empty(len(pts))
    for i, x in enumerate(pts):
        d = src - x
        r = np.linalg.norm(d, axis=1)
        with np.errstate(divide="ignore"):
            w = r ** (spec.alpha - grid.n) * grid.cell_volume
        near = np.all(np.abs(d) <= h / 2 * (1 + 1e-12), axis=1)
        for j in np.flatnonzero(near):
            w[j] = box_kernel_integral(d[j] - h / 2, d[j] + h / 2, spec.alpha)
        out[i] = w @ vals
    return out


def riesz_composition_constant(a: float, b: float, n: int) -> float:
    """c with  int |x-y|^(a-n) |y|^(b-n) dy = c |x|^(a+b-n)  for a, b > 0, a + b < n."""
    if not (a > 0 and b > 0 and a + b < n):
        raise ValueError("need a, b > 0 and a + b < n")
    return (
        math.pi ** (n / 2)
        * Gamma(a / 2)
        * Gamma(b / 2)
        * Gamma((n - a - b) / 2)
        / (Gamma((n - a) / 2) * Gamma((n - b) / 2) * Gamma((a + b) / 2))
    )


# --------------------------------------------------------------------------
# ball means


@dataclass(frozen=True)
class MollifierSpec:
    """Normalized ball indicator of radius r on a grid.

    ``normalization`` is 1 / (cells in the ball * cell volume), so the
    discrete mollifier has unit mass exactly; ``continuum_normalization`` is
    the 1 / (omega_n r^n) it approximates.
    """

    radius: float
    cells: int
    cell_volume: float
    n: int

    @classmethod
    def on(cls, grid: Grid, r: float) -> "MollifierSpec":
        if r < 2 * grid.h * (1 - 1e-12):
            raise ValueError(f"radius {r:g} is below the resolvable minimum 2h = {2 * grid.h:g}")
        cells = int(ball_stencil_full(grid, r).sum())
        return cls(float(r), cells, grid.cell_volume, grid.n)

    @property
    def normalization(self) -> float:
        return 1.0 / (self.cells * self.cell_volume)

    @property
    def continuum_normalization(self) -> float:
        return 1.0 / (unit_ball_volume(self.n) * self.radius**self.n)

    @property
    def mass(self) -> float:
        return self.cells * self.cell_volume * self.normalization


def ball_stencil_full(grid: Grid, r: float) -> np.ndarray:
    """Like :func:`ball_stencil` but never cropped to the grid extent."""
    m = [int(math.ceil(r / grid.spacing[k])) for k in range(grid.n)]
    offs = np.meshgrid(*[np.arange(-mk, mk + 1) * grid.spacing[k] for k, mk in enumerate(m)], indexing="ij")
    return sum(o * o for o in offs) < r * r


def _ball_means(values: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    moll = MollifierSpec.on(grid, r)
    return ball_sums(values, grid, r) / moll.cells


def mollified_average(g: ScalarField, r: float) -> ScalarField:
    """Mean of the zero-extended ``g`` over B(x, r) at every masked x."""
    return ScalarField(g.grid, _ball_means(g.values, g.grid, r))


def oscillation_ladder(grid: Grid, delta: float, ladder_size: int = 3) -> np.ndarray:
    """Radii 2h * sqrt(2)^k up to delta; nested for increasing delta."""
    if delta < 4 * grid.h * (1 - 1e-12):
        raise ValueError(f"delta must be at least 4h = {4 * grid.h:g}")
    kmax = int(math.floor(2 * math.log2(delta / (2 * grid.h)) + 1e-9))
    radii = 2 * grid.h * np.sqrt(2.0) ** np.arange(kmax + 1)
    if len(radii) < ladder_size:
        raise ValueError(f"delta {delta:g} admits only {len(radii)} ladder radii, {ladder_size} requested")
    return radii


def _point_ball_mean(g: ScalarField, x: np.ndarray, r: float) -> float:
    grid = g.grid
    lo = np.asarray(grid.lo)
    h = grid.spacing
    i0 = np.floor((x - r - lo) / h - 0.5).astype(int)
    i1 = np.ceil((x + r - lo) / h - 0.5).astype(int)
    idx = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(i0, i1)], indexing="ij")
    idx = np.stack(idx, axis=-1).reshape(-1, grid.n)
    c = lo + (idx + 0.5) * h
    inside = np.linalg.norm(c - x, axis=1) < r
    idx = idx[inside]
    ok = np.all((idx >= 0) & (idx < np.asarray(grid.shape)), axis=1)
    return float(g.values[tuple(idx[ok].T)].sum() / len(idx))


def oscillation(g: ScalarField, x, delta: float, ladder_size: int = 3) -> float:
    """max - min of ball means of ``g`` centered at the point x over radii in [2h, delta]."""
    grid = g.grid
    x = np.asarray(x, dtype=float)
    idx = grid.index_of(x)
    if not grid.mask[idx]:
        raise ValueError(f"point {x.tolist()} lies outside the domain")
    means = [_point_ball_mean(g, x, r) for r in oscillation_ladder(grid, delta, ladder_size)]
    return float(max(means) - min(means))


def oscillation_field(g: ScalarField, delta: float, ladder_size: int = 3) -> ScalarField:
    """The oscillation of ball means at every masked cell center."""
    grid = g.grid
    radii = oscillation_ladder(grid, delta, ladder_size)
    hi = np.full(grid.shape, -np.inf)
    lo = np.full(grid.shape, np.inf)
    for r in radii:
        m = _ball_means(g.values, grid, r)
        np.maximum(hi, m, out=hi)
        np.minimum(lo, m, out=lo)
    return ScalarField(grid, np.where(grid.mask, hi - lo, 0.0))


def maximal_function(f: ScalarField, family: BallFamily) -> ScalarField:
    """Centered maximal function over the family radii, with the radius-zero term |f(x)|."""
    if family.grid is not f.grid:
        raise ValueError("family and field live on different grids")
    if not family.dense:
        raise ValueError("maximal_function needs a dense family (center_stride=1)")
    a = np.abs(f.values)
    out = a.copy()
    for r in family.radii:
        np.maximum(out, _ball_means(a, f.grid, r), out=out)
    return ScalarField(f.grid, out)

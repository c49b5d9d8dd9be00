"""Riesz-Morrey and variational p-capacities as convex minimization on grids.

Both solvers return a :class:`CapacityResult` that carries a feasible
density, its objective, an upper bound certified by explicitly
constructed feasible points, and a lower bound from convex duality.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, optimize

from .energy import DiscreteGradient, PEnergy, newton_minimize
from .field import (
    Annulus,
    Ball,
    BallFamily,
    Bitmap,
    Box,
    Grid,
    ScalarField,
    Union,
    ball_stencil,
    ball_sums,
    family_integrals,
    shape_from_id,
    write_field,
)
from .morrey import MorreyIndex
from .riesz import RieszKernelSpec, riesz_operator


@dataclass(frozen=True)
class CompactSetSpec:
    """A compact set K given by a shape; on a grid it is the masked cells whose centers lie in it."""

    shape: Ball | Box | Union | Bitmap | Annulus

    @classmethod
    def ball(cls, center, radius: float) -> "CompactSetSpec":
        return cls(Ball(tuple(center), float(radius)))

    @classmethod
    def box(cls, lo, hi) -> "CompactSetSpec":
        return cls(Box(tuple(lo), tuple(hi)))

    @classmethod
    def two_balls(cls, a: tuple, b: tuple) -> "CompactSetSpec":
        """``a`` and ``b`` are (center, radius) pairs."""
        return cls(Union((Ball(tuple(a[0]), float(a[1])), Ball(tuple(b[0]), float(b[1])))))

    @classmethod
    def bitmap(cls, cells: np.ndarray, name: str = "bitmap") -> "CompactSetSpec":
        return cls(Bitmap(np.asarray(cells, dtype=bool), name))

    @classmethod
    def from_id(cls, text: str) -> "CompactSetSpec":
        return cls(shape_from_id(text))

    @property
    def tag(self) -> str:
        return self.shape.tag

    @property
    def id(self) -> str:
        return self.shape.id

    def cells(self, grid: Grid) -> np.ndarray:
        K = np.asarray(self.shape.contains(grid.centers), dtype=bool) & grid.mask
        if not K.any():
            raise ValueError(f"compact set {self.id} contains no masked cell")
        return K


@dataclass
class CapacityOptions:
    iterations: int = 200  # subgradient iterations per penalty stage
    penalties: tuple = (1e1, 1e3, 1e5)
    dual_iterations: int = 300
    dual: bool = True
    feasibility_tol: float = 1e-3
    gap_tol: float = 0.05  # relative gap above which a result is flagged
    eps: float = 1e-6  # gradient regularization for the variational solver
    newton_tol: float = 1e-12


@dataclass
class CapacityResult:
    kind: str
    value: float
    upper_bound: float
    lower_bound: float
    iterations: int
    violation: float
    density: ScalarField = field(repr=False)
    set_id: str = ""
    params: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"capacity value must be nonnegative, got {self.value}")
        if np.any(self.density.values < 0):
            raise ValueError("density must be nonnegative")
        if self.value > self.upper_bound * (1 + 1e-9) + 1e-14:
            raise ValueError("value exceeds its feasible upper bound")

    @property
    def gap(self) -> float:
        """Relative distance between the returned value and the dual lower bound."""
        return (self.value - self.lower_bound) / max(self.value, 1e-300)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("density")
        d["gap"] = self.gap
        return _plain(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, directory, stem: str = "capacity") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        js = directory / f"{stem}.json"
        js.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))
        return js, write_field(self.density, directory / f"{stem}.fld")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# --------------------------------------------------------------------------
# Riesz-Morrey capacity


class _MorreyCost:
    """F(x) = max over the family of r^(lam-n) * integral over B of x^p, with subgradients."""

    def __init__(self, family: BallFamily, idx: MorreyIndex):
        self.family = family
        self.grid = family.grid
        self.p = idx.p
        self.weights = family.radii ** (idx.lam - self.grid.n)
        self._stencils = [ball_stencil(self.grid, r) for r in family.radii]

    def terms(self, x: np.ndarray) -> np.ndarray:
        return family_integrals(x**self.p, self.family) * self.weights[None, :]

    def value(self, x: np.ndarray) -> float:
        return float(self.terms(x).max())

    def subgradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        t = self.terms(x)
        # np.argmax returns the first maximizer in C order: lexicographic tie-break
        i, j = np.unravel_index(int(np.argmax(t)), t.shape)
        g = np.zeros(self.grid.shape)
        self._paint(g, self.family.center_index[i], j, 1.0)
        g *= self.p * self.grid.cell_volume * self.weights[j] * x ** (self.p - 1)
        return float(t[i, j]), g * self.grid.mask

    def _paint(self, out, center, j, val):
        st = self._stencils[j]
        m = (np.asarray(st.shape) - 1) // 2
        lo = np.asarray(center) - m
        src, dst = [], []
        for k in range(self.grid.n):
            a, b = max(lo[k], 0), min(lo[k] + st.shape[k], self.grid.shape[k])
            dst.append(slice(a, b))
            src.append(slice(a - lo[k], b - lo[k]))
        out[tuple(dst)] += val * st[tuple(src)]

    def spread(self, theta: np.ndarray) -> np.ndarray:
        """a_c = vol * sum over balls b containing c of theta_b * weight_b."""
        grid = self.grid
        sel = tuple(self.family.center_index.T)
        layers = np.zeros((len(self.family.radii),) + grid.shape)
        layers[(slice(None),) + sel] = (theta * self.weights[None, :]).T
        bank = self.family.bank
        if bank is not None:
            a = bank.weighted_spread(layers)
        else:
            a = sum(ball_sums(layers[j], grid, r) for j, r in enumerate(self.family.radii))
        return np.maximum(a, 0.0) * grid.cell_volume


class _Constraint:
    def __init__(self, grid: Grid, K: np.ndarray, alpha: float):
        self.grid = grid
        self.K = K
        self.op = riesz_operator(grid, RieszKernelSpec(alpha))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(I_alpha x) on K."""
        return self.op.apply(x)[self.K]

    def adjoint(self, mu: np.ndarray) -> np.ndarray:
        z = np.zeros(self.grid.shape)
        z[self.K] = mu
        return self.op.apply(z) * self.grid.mask


def _explicit_candidates(grid: Grid, K: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Densities c * 1_S for S = K, dilations of K, and the ball about K of twice its radius."""
    pts = grid.centers[K]
    center = pts.mean(axis=0)
    R = float(np.max(np.linalg.norm(pts - center, axis=1))) + 0.5 * grid.cell_diagonal
    out = [("K", K.astype(float))]
    d_K = ndimage.distance_transform_edt(~K, sampling=grid.spacing)
    for t in (0.25, 0.5, 1.0):
        out.append((f"dilate({t:g}R)", ((d_K <= t * R) & grid.mask).astype(float)))
    ball2 = (np.linalg.norm(grid.centers - center, axis=-1) < 2 * R) & grid.mask
    out.append(("ball(2R)", ball2.astype(float)))
    return out


def _feasible(x: np.ndarray, con: _Constraint) -> tuple[np.ndarray, float]:
    """Rescale x >= 0 so that min over K of I_alpha x equals 1; returns (x, scale)."""
    m = float(con.apply(x).min())
    if not m > 0:
        return x, np.inf
    return x / m, m


def riesz_morrey_capacity(
    K: CompactSetSpec | np.ndarray,
    alpha: float,
    idx: MorreyIndex,
    family: BallFamily,
    opts: CapacityOptions | None = None,
) -> CapacityResult:
    """Least Morrey cost max_B r^(lam-n) * integral_B h^p over h >= 0 with I_alpha h >= 1 on K.

    Primal: projected subgradient on F(h) + penalty * mean hinge(1 - I_alpha h)
    with a Polyak step, over a penalty continuation; every iterate is rescaled
    onto the constraint set and the best one is kept.  Explicit densities
    c * 1_S seed the run and provide the certified upper bound.  A dual
    ascent over multipliers (mu on K, theta on the family simplex) gives
    the lower bound and further feasible points.
    """
    opts = opts or CapacityOptions()
    grid = family.grid
    n = grid.n
    idx.validate(n)
    if not 0 < alpha < n:
        raise ValueError(f"alpha must lie in (0, {n}), got {alpha}")
    if not idx.p > 1:
        raise ValueError(f"p must exceed 1, got {idx.p}")
    spec = K if isinstance(K, CompactSetSpec) else CompactSetSpec.bitmap(K)
    Kc = spec.cells(grid)
    p = idx.p
    cost = _MorreyCost(family, idx)
    con = _Constraint(grid, Kc, alpha)
    nk = int(Kc.sum())
    history = []

    # explicit feasible points: the certificate and the seed
    certificate, seed_x = np.inf, None
    for name, ind in _explicit_candidates(grid, Kc):
        x, m = _feasible(ind, con)
        if np.isfinite(m):
            v = cost.value(x)
            history.append({"stage": f"explicit:{name}", "value": v})
            if v < certificate:
                certificate, seed_x = v, x
    best_val, best_x = certificate, seed_x
    iters = 0

    def consider(x):
        nonlocal best_val, best_x
        y, m = _feasible(x, con)
        if np.isfinite(m):
            v = cost.value(y)
            if v < best_val:
                best_val, best_x = v, y

    # primal: penalized projected subgradient
    x = seed_x.copy()
    for pen in opts.penalties:
        kappa = 0.1
        stall, stage_best = 0, best_val
        for _ in range(opts.iterations):
            iters += 1
            Ax = con.apply(x)
            hinge = np.maximum(1.0 - Ax, 0.0)
            f, g = cost.subgradient(x)
            phi = f + pen * hinge.mean()
            g = g - (pen / nk) * con.adjoint((hinge > 0).astype(float))
            g[~grid.mask] = 0.0
            m = Ax.min()
            if m > 0 and f / m**p < best_val:
                best_val, best_x = f / m**p, x / m
            gg = float(np.sum(g * g))
            if gg == 0:
                break
            target = (1 - kappa) * best_val
            step = max(phi - target, 0.0) / gg
            x = np.maximum(x - step * g, 0.0)
            if best_val < stage_best * (1 - 1e-4):
                stage_best, stall = best_val, 0
            else:
                stall += 1
                if stall >= 20:
                    kappa, stall = kappa / 2, 0
        history.append({"stage": f"penalty:{pen:g}", "value": best_val})

    lower = 0.0
    if opts.dual:
        lower, xs, dual_iters = _dual_bound(cost, con, p, best_x, best_val, opts.dual_iterations)
        iters += dual_iters
        for xd in xs:
            consider(xd)
        history.append({"stage": "dual", "value": best_val, "lower_bound": lower})

    viol = float(np.max(1.0 - con.apply(best_x)))
    flags = []
    if viol > opts.feasibility_tol:
        flags.append("infeasible")
    if opts.dual and (best_val - lower) > opts.gap_tol * best_val:
        flags.append("gap")
    return CapacityResult(
        kind="riesz-morrey",
        value=float(best_val),
        upper_bound=float(certificate),
        lower_bound=float(min(lower, best_val)),
        iterations=iters,
        violation=max(viol, 0.0),
        density=ScalarField(grid, best_x),
        set_id=spec.id,
        params={"alpha": alpha, "p": p, "lambda": idx.lam, "family": family.describe(), "cells": nk},
        flags=flags,
        history=history,
    )


def _dual_bound(
    cost: _MorreyCost, con: _Constraint, p: float, x0: np.ndarray, scale: float, maxiter: int,
    verbose: bool = False,
):
    """Maximize D(mu, theta) = sum mu + sum_c min_{x>=0} (a_c(theta) x^p - w_c(mu) x).

    w = adjoint(mu) and theta is a probability vector over the family.  The
    inner minimizer is x* = (w+ / (p a))^(1/(p-1)).  Weak duality makes
    every D a lower bound; the x* are returned as candidate primal points.
    First mu alone is optimized with theta fixed near the balls active at
    x0 (exact when one ball dominates, as for lam = n), then mu and
    theta = softmax(zeta) jointly.
    """
    nk = int(con.K.sum())
    shape = (len(cost.family.center_index), len(cost.family.radii))
    mask = con.grid.mask
    tiny = 1e-300

    def softmax(zeta):
        e = np.exp(zeta - zeta.max())
        return e / e.sum()

    def inner(mu, theta):
        a = np.maximum(cost.spread(theta), tiny)
        w = np.maximum(con.adjoint(mu), 0.0)
        x = np.where(mask, (w / (p * a)) ** (1 / (p - 1)), 0.0)
        return a, x

    def dual(mu, theta):
        a, x = inner(mu, theta)
        return float(mu.sum() - (p - 1) * np.sum(a * x**p)), x

    t0 = cost.terms(x0)
    theta_fixed = softmax(50.0 * t0 / t0.max())

    def neg_fixed(mu):
        D, x = dual(mu, theta_fixed)
        return -D, -(1.0 - con.apply(x))

    def neg_joint(z):
        mu, zeta = z[:nk], z[nk:].reshape(shape)
        theta = softmax(zeta)
        D, x = dual(mu, theta)
        g_theta = cost.terms(x)
        g_zeta = theta * (g_theta - np.sum(theta * g_theta))
        return -D, -np.concatenate([1.0 - con.apply(x), g_zeta.ravel()])

    opts = {"maxiter": maxiter, "ftol": 0.0, "gtol": 1e-12}
    r1 = optimize.minimize(
        neg_fixed, np.full(nk, scale / nk), jac=True, method="L-BFGS-B",
        bounds=[(0, None)] * nk, options=opts,
    )
    z0 = np.concatenate([r1.x, (2.0 * t0 / t0.max()).ravel()])
    r2 = optimize.minimize(
        neg_joint, z0, jac=True, method="L-BFGS-B",
        bounds=[(0, None)] * nk + [(None, None)] * len(t0.ravel()), options=opts,
    )
    if verbose:
        print(r1.message, r1.nit, -r1.fun, "|", r2.message, r2.nit, -r2.fun)
    found = [inner(r1.x, theta_fixed)[1], inner(r2.x[:nk], softmax(r2.x[nk:].reshape(shape)))[1]]
    return max(-float(r1.fun), -float(r2.fun), 0.0), found, int(r1.nit + r2.nit)


# --------------------------------------------------------------------------
# variational p-capacity


def _candidate_potentials(grid: Grid, K: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Explicit admissible fields: 1 on K, 0 off the domain."""
    d_out = grid.boundary_distance()
    d_K = ndimage.distance_transform_edt(~K, sampling=grid.spacing)
    out = []
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(K, 1.0, d_out / (d_out + d_K))
    out.append(("distance-ratio", np.where(grid.mask, ratio, 0.0)))
    gap = float(np.min(np.where(K, d_out, np.inf)))
    for frac in (0.5, 1.0):
        t = max(frac * gap, grid.h)
        f = np.clip(1 - d_K / t, 0, 1) * np.minimum(1.0, d_out / max(grid.h, 1e-300))
        f = np.where(K, 1.0, f)
        out.append((f"ramp({frac:g})", np.where(grid.mask, f, 0.0)))
    return out


def variational_p_capacity(
    K: CompactSetSpec | np.ndarray, grid: Grid, p: float, opts: CapacityOptions | None = None
) -> CapacityResult:
    """min of the discrete p-energy over f = 0 off the domain with f >= 1 on K.

    Truncating at 1 never raises the energy, so the minimizer equals 1 on
    K; those values are held fixed and the rest is found by damped Newton.
    The lower bound is the conditional-gradient bound over 0 <= f <= 1.
    """
    opts = opts or CapacityOptions()
    n = grid.n
    if not 1 < p < n:
        raise ValueError(f"variational capacity needs 1 < p < n = {n}, got p = {p}")
    spec = K if isinstance(K, CompactSetSpec) else CompactSetSpec.bitmap(K)
    Kc = spec.cells(grid)
    D = DiscreteGradient(grid)
    Kv = D.to_vector(Kc)
    exact = PEnergy(D, p, 0.0)

    certificate, seed = np.inf, None
    history = []
    for name, f in _candidate_potentials(grid, Kc):
        v = exact.energy(D.to_vector(f))
        history.append({"stage": f"explicit:{name}", "value": v})
        if v < certificate:
            certificate, seed = v, D.to_vector(f)

    u0 = seed.copy()
    res = newton_minimize(PEnergy(D, p, opts.eps), u0, fixed=Kv, tol=opts.newton_tol)
    u = np.clip(res.u, 0.0, 1.0)
    u[Kv] = 1.0
    value = exact.energy(u)
    if value > certificate:
        u, value = seed, certificate
    history.append({"stage": "newton", "value": value, "iterations": res.iterations})

    # conditional-gradient lower bound: E(v) >= E(u) + <grad E(u), v - u> for all feasible v
    g = p * exact.gradient(u)
    free = ~Kv
    lin = np.minimum(g[free] * (0.0 - u[free]), g[free] * (1.0 - u[free]))
    lower = max(value + float(np.sum(lin)), 0.0)

    flags = []
    if not res.converged:
        flags.append("newton-not-converged")
    if (value - lower) > opts.gap_tol * value:
        flags.append("gap")
    return CapacityResult(
        kind="variational",
        value=float(value),
        upper_bound=float(certificate),
        lower_bound=float(min(lower, value)),
        iterations=res.iterations,
        violation=0.0,
        density=ScalarField(grid, D.to_array(u)),
        set_id=spec.id,
        params={"p": p, "cells": int(Kc.sum())},
        flags=flags,
        history=history,
    )


# --------------------------------------------------------------------------
# outer capacity


@dataclass
class OuterCapacity:
    value: float
    values: list
    monotone: bool
    results: list = field(default_factory=list, repr=False)


def capacity_outer(
    inner_family: Sequence[CompactSetSpec],
    alpha: float,
    idx: MorreyIndex,
    family: BallFamily,
    opts: CapacityOptions | None = None,
    rtol: float = 0.02,
) -> OuterCapacity:
    """Sup of the capacity over an increasing exhaustion by compact cell sets (0 if empty)."""
    if len(inner_family) == 0:
        return OuterCapacity(0.0, [], True)
    grid = family.grid
    prev = None
    for s in inner_family:
        cur = s.cells(grid)
        if prev is not None and np.any(prev & ~cur):
            raise ValueError("inner_family must be increasing under inclusion")
        prev = cur
    results = [riesz_morrey_capacity(s, alpha, idx, family, opts) for s in inner_family]
    vals = [r.value for r in results]
    mono = all(b >= a * (1 - rtol) for a, b in zip(vals, vals[1:]))
    return OuterCapacity(float(max(vals)), vals, mono, results)

"""Morrey norms, BMO and Hölder seminorms, and smooth compactly supported approximation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .field import BallFamily, ScalarField, ball_stencil, family_integrals
from .riesz import mollified_average


@dataclass(frozen=True)
class MorreyIndex:
    """Exponent pair (p, lam) of the Morrey space L^{p,lam}: 1 <= p < inf, 0 < lam <= n."""

    p: float
    lam: float

    def __post_init__(self):
        if not (1 <= self.p < np.inf):
            raise ValueError(f"p must lie in [1, inf), got {self.p}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    def validate(self, n: int):
        if self.lam > n:
            raise ValueError(f"lambda must be <= n = {n}, got {self.lam}")


@dataclass
class SeminormReport:
    value: float
    witness: dict
    family: dict
    kind: str = "morrey"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("seminorm values are nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _argmax_first(a: np.ndarray) -> tuple[int, int]:
    i = int(np.argmax(a))
    return np.unravel_index(i, a.shape)


def morrey_norm(f: ScalarField, idx: MorreyIndex, family: BallFamily) -> SeminormReport:
    """max over the family of (r^(lam-n) * integral over B(x,r) of |f|^p)^(1/p)."""
    grid = f.grid
    idx.validate(grid.n)
    if family.grid is not grid:
        raise ValueError("family and field live on different grids")
    ints = family_integrals(np.abs(f.values) ** idx.p, family)
    scaled = np.maximum(ints, 0.0) * family.radii[None, :] ** (idx.lam - grid.n)
    i, j = _argmax_first(scaled)
    return SeminormReport(
        float(scaled[i, j] ** (1 / idx.p)),
        family.witness(i, j),
        family.describe(),
        "morrey",
        {"p": idx.p, "lambda": idx.lam},
    )


def morrey_profile(f: ScalarField, idx: MorreyIndex, family: BallFamily) -> np.ndarray:
    """Per-radius maxima of the Morrey functional (before the 1/p power)."""
    ints = family_integrals(np.abs(f.values) ** idx.p, family)
    return np.max(ints, axis=0) * family.radii ** (idx.lam - f.grid.n)


def _ball_gather(f: ScalarField, family: BallFamily, r: float, chunk_cells: int = 4_000_000):
    """Yield (center rows, values, in-domain flags) for balls of radius r."""
    grid = f.grid
    st = ball_stencil(grid, r)
    m = (np.asarray(st.shape) - 1) // 2
    offs = np.argwhere(st) - m
    shape = np.asarray(grid.shape)
    per = max(1, chunk_cells // len(offs))
    for s in range(0, len(family.center_index), per):
        c = family.center_index[s : s + per]
        idx = c[:, None, :] + offs[None, :, :]
        ok = np.all((idx >= 0) & (idx < shape), axis=-1)
        idx = np.where(ok[..., None], idx, 0)
        sel = tuple(np.moveaxis(idx, -1, 0))
        inside = ok & grid.mask[sel]
        yield s, np.where(inside, f.values[sel], 0.0), inside


def bmo_seminorm(f: ScalarField, family: BallFamily) -> SeminormReport:
    """max over the family of the mean of |f - mean f| over B(x, r) intersected with the domain."""
    best, arg = -1.0, (0, 0)
    for j, r in enumerate(family.radii):
        for s, vals, inside in _ball_gather(f, family, r):
            cnt = inside.sum(axis=1)
            mean = vals.sum(axis=1) / cnt
            osc = np.where(inside, np.abs(vals - mean[:, None]), 0.0).sum(axis=1) / cnt
            i = int(np.argmax(osc))
            if osc[i] > best:
                best, arg = float(osc[i]), (s + i, j)
    return SeminormReport(max(best, 0.0), family.witness(*arg), family.describe(), "bmo")


def holder_seminorm(
    f: ScalarField, beta: float, pairs: int = 1000, seed: int = 0, anchors: bool = True
) -> SeminormReport:
    """Sampled lower bound of sup |f(x) - f(y)| / |x - y|^beta over masked pairs.

    The sample always contains every pair of axis neighbours, ``pairs``
    uniformly random pairs (drawn in blocks of 1000 so that a larger budget
    extends a smaller one) and, with ``anchors``, every cell paired with the
    cells where f is largest and smallest.
    """
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    grid = f.grid
    pts = grid.points
    vals = f.masked
    m = len(pts)
    flat = -np.ones(grid.shape, dtype=np.int64)
    flat[grid.mask] = np.arange(m)

    chunks = []
    for k in range(grid.n):
        a = np.moveaxis(flat, k, 0)
        i, j = a[:-1].ravel(), a[1:].ravel()
        ok = (i >= 0) & (j >= 0)
        chunks.append(np.stack([i[ok], j[ok]], axis=1))
    rng = np.random.default_rng(seed)
    for s in range(0, pairs, 1000):
        blk = rng.integers(0, m, size=(1000, 2))
        chunks.append(blk[: min(1000, pairs - s)])
    if anchors:
        everyone = np.arange(m)
        for a in (int(np.argmax(vals)), int(np.argmin(vals))):
            chunks.append(np.stack([np.full(m, a), everyone], axis=1))
    ij = np.concatenate(chunks)
    ij = ij[ij[:, 0] != ij[:, 1]]
    dist = np.linalg.norm(pts[ij[:, 0]] - pts[ij[:, 1]], axis=1)
    ratio = np.abs(vals[ij[:, 0]] - vals[ij[:, 1]]) / dist**beta
    w = int(np.argmax(ratio))
    return SeminormReport(
        float(ratio[w]),
        {"x": pts[ij[w, 0]].tolist(), "y": pts[ij[w, 1]].tolist()},
        {"pairs_sampled": int(len(ij)), "random_pairs": int(pairs), "seed": int(seed)},
        "holder",
        {"beta": beta},
    )


@dataclass
class ZorkoResult:
    approximant: ScalarField
    error: float
    rho: float
    achieved: bool
    errors: list = field(default_factory=list)


def zorko_approximate(
    f: ScalarField,
    source: MorreyIndex,
    gamma: float,
    eps: float,
    rho_ladder: Sequence[float],
    family: BallFamily,
) -> ZorkoResult:
    """Approximate f in L^{p,gamma} by compactly supported ball-mean mollifications.

    For each radius rho of the (decreasing) ladder, f is cut off on a
    boundary collar of width 2*rho and averaged over balls of radius rho, so
    the approximant vanishes within rho of the boundary.  Returns the first
    approximant with error below ``eps``, or the best one if none is.
    """
    if not gamma > source.lam:
        raise ValueError(f"target exponent gamma={gamma} must exceed the source lambda={source.lam}")
    rhos = np.asarray(rho_ladder, dtype=float)
    if np.any(np.diff(rhos) >= 0):
        raise ValueError("rho_ladder must be strictly decreasing")
    target = MorreyIndex(source.p, gamma)
    dist = f.grid.boundary_distance()
    errors = []
    best = None
    for rho in rhos:
        inner = f.with_values(np.where(dist >= 2 * rho, f.values, 0.0))
        g = mollified_average(inner, rho)
        err = morrey_norm(f - g, target, family).value
        errors.append((float(rho), err))
        if best is None or err < best[1]:
            best = (g, err, float(rho))
        if err < eps:
            return ZorkoResult(g, err, float(rho), True, errors)
    return ZorkoResult(best[0], best[1], best[2], False, errors)

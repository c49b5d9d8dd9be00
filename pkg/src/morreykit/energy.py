"""Discrete p-Dirichlet energy on masked grids and a damped Newton minimizer.

Unknowns live on the masked cells; the field is zero outside.  Each cell
carries 2^n one-sided gradients (one per choice of forward/backward
difference on every axis) and its energy is their average,

    E(u) = sum_cells vol * 2^-n * sum_sigma (|D_sigma u|^2 + eps^2)^(p/2).

Differences across a boundary face use the half-cell distance to the
face, where the zero boundary value is imposed.  For p = 2 this is the
standard second-order cell-centered five-point (seven-point in 3-D)
Dirichlet Laplacian.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .field import Grid


class DiscreteGradient:
    """One-sided difference operators on the masked cells of a grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        n = grid.n
        m = int(grid.mask.sum())
        self.m = m
        flat = -np.ones(grid.shape, dtype=np.int64)
        flat[grid.mask] = np.arange(m)
        self.index = flat
        cells = np.argwhere(grid.mask)
        rows = np.arange(m)
        self.sides = {}
        for k in range(n):
            h = grid.spacing[k]
            for s in (+1, -1):
                nb = cells.copy()
                nb[:, k] += s
                inside = (nb[:, k] >= 0) & (nb[:, k] < grid.shape[k])
                j = np.full(m, -1)
                j[inside] = flat[tuple(nb[inside].T)]
                interior = j >= 0
                # forward: (u_nb - u_c)/h ; backward: (u_c - u_nb)/h ; outside neighbor is 0 at h/2
                r_i, c_i, v_i = rows[interior], j[interior], np.full(interior.sum(), s / h)
                r_c = rows
                v_c = np.where(interior, -s / h, -s / (h / 2))
                B = sparse.csr_matrix(
                    (np.concatenate([v_i, v_c]), (np.concatenate([r_i, r_c]), np.concatenate([c_i, rows]))),
                    shape=(m, m),
                )
                self.sides[(k, s)] = B
        self.corners = list(itertools.product((+1, -1), repeat=n))

    def to_vector(self, values: np.ndarray) -> np.ndarray:
        return values[self.grid.mask]

    def to_array(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[self.grid.mask] = u
        return out

    @cached_property
    def corner_ops(self) -> list[sparse.csr_matrix]:
        """Per corner, the stacked (n*m x m) gradient operator, component-major."""
        return [
            sparse.vstack([self.sides[(k, s)] for k, s in enumerate(sig)]).tocsr() for sig in self.corners
        ]

    def gradients(self, u: np.ndarray) -> list[np.ndarray]:
        """Per corner, an (n, m) array of one-sided gradient vectors."""
        return [(G @ u).reshape(self.grid.n, self.m) for G in self.corner_ops]

    def magnitude(self, u: np.ndarray) -> np.ndarray:
        """Cell-wise |grad u| from central differences (mean of the one-sided pairs).

        At the domain boundary the backward/forward pair uses the half-cell
        face difference on the outside, so the result is one-sided there.
        """
        comps = []
        for k in range(self.grid.n):
            comps.append(0.5 * (self.sides[(k, 1)] @ u + self.sides[(k, -1)] @ u))
        return np.sqrt(sum(c * c for c in comps))


@dataclass
class PEnergy:
    """E(u)/p - <b, u> with the regularized discrete p-energy."""

    grad: DiscreteGradient
    p: float
    eps: float = 0.0
    b: np.ndarray | None = None
    weight: np.ndarray | None = None  # optional per-cell weight in the energy

    def _w(self):
        g = self.grad.grid
        base = g.cell_volume / 2**g.n
        return base if self.weight is None else base * self.weight

    def energy(self, u: np.ndarray, eps: float | None = None) -> float:
        """The p-energy itself (sum of |grad u|^p), without the 1/p and the load."""
        e2 = (self.eps if eps is None else eps) ** 2
        w = self._w()
        tot = 0.0
        for g in self.grad.gradients(u):
            tot += np.sum(w * (np.sum(g * g, axis=0) + e2) ** (self.p / 2))
        return float(tot)

    def value(self, u: np.ndarray) -> float:
        val = self.energy(u) / self.p
        if self.b is not None:
            val -= float(self.b @ u)
        return val

    def flux(self, u: np.ndarray, eps: float | None = None) -> list[np.ndarray]:
        """Per corner, w * a^(p/2-1) * g  (the discrete |grad u|^(p-2) grad u, weighted)."""
        e2 = (self.eps if eps is None else eps) ** 2
        w = self._w()
        out = []
        for g in self.grad.gradients(u):
            a = np.sum(g * g, axis=0) + e2
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(a > 0, a ** (self.p / 2 - 1), 1.0 if self.p == 2 else 0.0)
            out.append(w * s * g)
        return out

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Gradient of E/p - <b,u>."""
        tot = np.zeros_like(u)
        for G, fl in zip(self.grad.corner_ops, self.flux(u)):
            tot += G.T @ fl.ravel()
        if self.b is not None:
            tot -= self.b
        return tot

    def hessian(self, u: np.ndarray) -> sparse.csr_matrix:
        """Hessian of E/p (the load term is linear)."""
        n, m = self.grad.grid.n, self.grad.m
        e2 = self.eps**2
        w = self._w() * np.ones(m)
        H = None
        for G, g in zip(self.grad.corner_ops, self.grad.gradients(u)):
            a = np.sum(g * g, axis=0) + e2
            if self.p < 2:
                a = np.maximum(a, 1e-300)
            with np.errstate(divide="ignore", invalid="ignore"):
                c = w * np.where(a > 0, a ** (self.p / 2 - 1), 1.0 if self.p == 2 else 0.0)
                d = np.where(a > 0, (self.p - 2) * c / a, 0.0)
            rows, cols, vals = [], [], []
            for i in range(n):
                for j in range(n):
                    v = d * g[i] * g[j]
                    if i == j:
                        v = v + c
                    rows.append(i * m + np.arange(m))
                    cols.append(j * m + np.arange(m))
                    vals.append(v)
            M = sparse.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * m, n * m)
            )
            term = G.T @ M @ G
            H = term if H is None else H + term
        return H.tocsr()


@dataclass
class NewtonResult:
    u: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    decrement: float = np.inf


def _solve(H, rhs):
    if H.shape[0] <= 80_000:
        return spla.spsolve(H.tocsc(), rhs)
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(H, symmetry="symmetric")
    x, info = spla.cg(H, rhs, M=ml.aspreconditioner(), rtol=1e-10, maxiter=400)
    return x


def newton_minimize(
    obj: PEnergy,
    u0: np.ndarray,
    fixed: np.ndarray | None = None,
    tol: float = 1e-12,
    maxiter: int = 100,
    lower: np.ndarray | None = None,
) -> NewtonResult:
    """Damped Newton descent on a convex :class:`PEnergy` objective.

    ``fixed`` marks unknowns held at their ``u0`` values.  Backtracking keeps
    the objective nonincreasing at every step; ``history`` records it.
    The loop stops when the Newton decrement falls below ``tol`` relative
    to the objective scale.
    """
    u = np.array(u0, dtype=float)
    free = np.ones(len(u), dtype=bool) if fixed is None else ~fixed
    f = obj.value(u)
    hist = [f]
    dec = np.inf
    for it in range(1, maxiter + 1):
        gr = obj.gradient(u)[free]
        H = obj.hessian(u)[free][:, free]
        step = -_solve(H, gr)
        dec = float(-gr @ step)
        scale = max(abs(f), obj.energy(u) / obj.p, 1e-300)
        if dec / 2 <= tol * scale:
            return NewtonResult(u, True, it - 1, hist, dec)
        t = 1.0
        while True:
            trial = u.copy()
            trial[free] += t * step
            if lower is not None:
                np.maximum(trial, lower, out=trial)
            ft = obj.value(trial)
            if ft <= f - 1e-4 * t * dec or t < 1e-10:
                break
            t *= 0.5
        if ft > f:
            return NewtonResult(u, False, it, hist, dec)
        u, f = trial, ft
        hist.append(f)
    return NewtonResult(u, False, maxiter, hist, dec)

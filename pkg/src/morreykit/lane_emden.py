"""Nonnegative weak solutions of -div(|grad u|^(p-2) grad u) = u^(q+1) or e^u, and their diagnostics.

All solves minimize the discrete p-energy of :mod:`morreykit.energy`, so
the discrete weak form tested here is exactly the Euler-Lagrange equation
of what was minimized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .energy import DiscreteGradient, PEnergy, newton_minimize
from .field import BallFamily, Grid, ScalarField, ball_sums, write_field
from .morrey import MorreyIndex, SeminormReport, morrey_norm


@lru_cache(maxsize=8)
def _gradient(grid: Grid) -> DiscreteGradient:
    return DiscreteGradient(grid)


@dataclass
class SolverOptions:
    tol: float = 1e-12  # Newton decrement tolerance (relative)
    maxiter: int = 60  # Newton iterations per convex solve
    eps_reg: float = 1e-6  # relative to the field scale
    outer_tol: float = 1e-9  # fixed-point tolerance of the outer iterations
    outer_maxiter: int = 400
    damping: float = 1.0  # theta in the exponential-case iteration
    residual_tol: float = 1e-4
    battery_size: int = 50
    battery_seed: int = 0


@dataclass
class PLaplaceProblem:
    grid: Grid
    p: float
    kind: str = "power"  # power | exp | source
    q: float | None = None
    source: ScalarField | None = None
    opts: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.kind not in ("power", "exp", "source"):
            raise ValueError(f"unknown nonlinearity {self.kind!r}")
        if self.kind == "power":
            if self.q is None or not self.q > 0:
                raise ValueError("power nonlinearity needs q > 0")
            if abs(self.p - (self.q + 2)) < 1e-12:
                raise ValueError("p = q + 2: the rescaling step is undefined")
        if self.kind == "source" and self.source is None:
            raise ValueError("source nonlinearity needs a source field")

    @property
    def subcritical_p(self) -> bool:
        """Whether p < n, the range where the regularity estimates are stated."""
        return self.p < self.grid.n

    def rhs(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return np.maximum(u, 0.0) ** (self.q + 1)
        if self.kind == "exp":
            with np.errstate(over="ignore"):  # a diverging iterate is flagged by the caller
                return np.exp(u)
        return self.source.values


@dataclass
class SolutionReport:
    u: ScalarField = field(repr=False)
    kind: str
    p: float
    q: float | None
    converged: bool
    outer_iterations: int
    residual: float
    energy: float
    eps_reg: float
    subcritical_p: bool
    eigenvalue: float | None = None
    u_exp_u: float | None = None
    history: list = field(default_factory=list, repr=False)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.u.values < 0):
            raise ValueError("solution must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "q": self.q,
            "converged": self.converged,
            "outer_iterations": self.outer_iterations,
            "residual": self.residual,
            "energy": self.energy,
            "eps_reg": self.eps_reg,
            "subcritical_p": self.subcritical_p,
            "eigenvalue": self.eigenvalue,
            "u_exp_u": self.u_exp_u,
            "max_u": self.u.max_abs(),
            "flags": self.flags,
        }

    def save(self, directory, stem: str = "solution") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        js = directory / f"{stem}.json"
        js.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))
        grad = ScalarField(self.u.grid, gradient_magnitude(self.u))
        return [
            js,
            write_field(self.u, directory / f"{stem}.fld"),
            write_field(grad, directory / f"{stem}-grad.fld"),
        ]


# --------------------------------------------------------------------------
# convex building block


def _source_vector(grid: Grid, D: DiscreteGradient, f: np.ndarray) -> np.ndarray:
    return D.to_vector(f) * grid.cell_volume


def _solve_vec(D: DiscreteGradient, p: float, b: np.ndarray, u0: np.ndarray, opts: SolverOptions, scale: float):
    obj = PEnergy(D, p, opts.eps_reg * max(scale, 1e-300), b)
    res = newton_minimize(obj, u0, tol=opts.tol, maxiter=opts.maxiter)
    if any(b2 > a2 * (1 + 1e-12) + 1e-300 for a2, b2 in zip(res.history, res.history[1:])):
        raise AssertionError("energy increased during the convex solve")
    return res


def solve_dirichlet_p_laplace(
    f: ScalarField, p: float, grid: Grid | None = None, opts: SolverOptions | None = None, u0=None
) -> ScalarField:
    """Minimizer of the p-energy/p minus the integral of f v over zero-boundary grid fields."""
    grid = grid or f.grid
    if f.grid is not grid:
        raise ValueError("source lives on a different grid")
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    opts = opts or SolverOptions()
    D = _gradient(grid)
    b = _source_vector(grid, D, f.values)
    if not np.any(b):
        return ScalarField(grid, np.zeros(grid.shape))
    scale = _field_scale(grid, p, b)
    x0 = np.zeros(D.m) if u0 is None else D.to_vector(np.asarray(u0))
    res = _solve_vec(D, p, b, x0, opts, scale)
    return ScalarField(grid, D.to_array(res.u))


def _field_scale(grid: Grid, p: float, b: np.ndarray) -> float:
    """Rough size of |grad u| for the load b, used to scale the regularization."""
    load = float(np.abs(b).sum() / grid.measure)
    return max(load * grid.diameter, 1e-12) ** (1 / (p - 1)) if p != 2 else max(load * grid.diameter, 1e-12)


# --------------------------------------------------------------------------
# Lane-Emden solvers


def _first_eigenfunction(grid: Grid) -> np.ndarray:
    """Approximate first Dirichlet eigenfunction (a few inverse power steps of the Laplacian)."""
    D = _gradient(grid)
    obj = PEnergy(D, 2.0)
    H = obj.hessian(np.zeros(D.m))
    from scipy.sparse.linalg import factorized

    solve = factorized(H.tocsc()) if D.m <= 80_000 else None
    v = np.ones(D.m)
    for _ in range(8):
        if solve is not None:
            v = solve(v * grid.cell_volume)
        else:
            v = newton_minimize(PEnergy(D, 2.0, 0.0, v * grid.cell_volume), v, maxiter=2).u
        v /= np.abs(v).max()
    return np.abs(v)


def solve_lane_emden_power(prob: PLaplaceProblem, u0: ScalarField | None = None) -> SolutionReport:
    """Nonnegative solution of -Delta_p u = u^(q+1) by normalized inverse iteration and rescaling.

    w_{k+1} = v / max v with -Delta_p v = w_k^(q+1).  At a fixed point
    -Delta_p w = Lam w^(q+1) with Lam = (max v)^(1-p), and u = c w with
    c^(p-q-2) Lam = 1 solves the equation.
    """
    if prob.kind != "power":
        raise ValueError("problem is not of power type")
    grid, p, q, opts = prob.grid, prob.p, prob.q, prob.opts
    D = _gradient(grid)
    w = _first_eigenfunction(grid) if u0 is None else D.to_vector(u0.values)
    w = np.maximum(w, 0.0)
    w /= w.max()
    v = w.copy()
    history = []
    converged = False
    it = 0
    for it in range(1, opts.outer_maxiter + 1):
        b = w ** (q + 1) * grid.cell_volume
        res = _solve_vec(D, p, b, v, opts, _field_scale(grid, p, b))
        v = np.maximum(res.u, 0.0)
        top = v.max()
        w_new = v / top
        change = float(np.abs(w_new - w).max())
        history.append({"iteration": it, "change": change, "max_v": float(top)})
        w = w_new
        if change < opts.outer_tol:
            converged = True
            break
        if not np.isfinite(change):
            break
    lam = float(top ** (1 - p))
    c = lam ** (1.0 / (q + 2 - p))
    u = c * w
    flags = [] if converged else ["not-converged"]
    rep = _report(prob, D, u, converged, it, history, flags)
    rep.eigenvalue = lam
    return rep


def solve_lane_emden_exp(prob: PLaplaceProblem, u0: ScalarField | None = None) -> SolutionReport:
    """Minimal nonnegative solution of -Delta_p u = e^u by damped fixed-point iteration from 0."""
    if prob.kind != "exp":
        raise ValueError("problem is not of exponential type")
    grid, p, opts = prob.grid, prob.p, prob.opts
    D = _gradient(grid)
    u = np.zeros(D.m) if u0 is None else D.to_vector(u0.values)
    theta = opts.damping
    history = []
    converged = False
    it = 0
    for it in range(1, opts.outer_maxiter + 1):
        b = np.exp(u) * grid.cell_volume
        res = _solve_vec(D, p, b, u, opts, _field_scale(grid, p, b))
        nxt = (1 - theta) * u + theta * np.maximum(res.u, 0.0)
        change = float(np.abs(nxt - u).max())
        history.append({"iteration": it, "change": change, "max_u": float(nxt.max())})
        u = nxt
        if change < opts.outer_tol * max(1.0, u.max()):
            converged = True
            break
        if not np.isfinite(change) or u.max() > 1e3:
            break
    flags = [] if converged else ["diverged" if not np.isfinite(u).all() or u.max() > 1e3 else "not-converged"]
    if not np.isfinite(u).all():
        u = np.zeros(D.m)
    rep = _report(prob, D, u, converged, it, history, flags)
    with np.errstate(over="ignore"):
        rep.u_exp_u = float(np.sum(u * np.exp(u)) * grid.cell_volume)
    return rep


def _report(prob, D, u, converged, iters, history, flags) -> SolutionReport:
    grid = prob.grid
    field_u = ScalarField(grid, D.to_array(np.maximum(u, 0.0)))
    res = weak_residual(field_u, prob)
    if res > prob.opts.residual_tol:
        flags = flags + ["residual"]
    energy = PEnergy(D, prob.p).energy(D.to_vector(field_u.values))
    return SolutionReport(
        u=field_u,
        kind=prob.kind,
        p=prob.p,
        q=prob.q,
        converged=converged,
        outer_iterations=iters,
        residual=res,
        energy=energy,
        eps_reg=prob.opts.eps_reg,
        subcritical_p=prob.subcritical_p,
        history=history,
        flags=flags,
    )


# --------------------------------------------------------------------------
# weak-form battery


def bump_battery(grid: Grid, count: int = 50, seed: int = 0) -> list[np.ndarray]:
    """Random C^1 bumps (1 - |x-c|^2/w^2)^2 supported in balls well inside the domain."""
    rng = np.random.default_rng(seed)
    dist = grid.boundary_distance()
    pts = grid.centers
    cand = np.argwhere(grid.mask & (dist > 6 * grid.h))
    if len(cand) == 0:
        raise ValueError("domain too thin for the test-function battery")
    out = []
    for _ in range(count):
        c_idx = tuple(cand[rng.integers(len(cand))])
        wmax = float(dist[c_idx]) - grid.h
        w = rng.uniform(4 * grid.h, max(wmax, 4 * grid.h + 1e-12))
        w = min(w, wmax)
        r2 = np.sum((pts - pts[c_idx]) ** 2, axis=-1) / w**2
        out.append(np.where(r2 < 1, (1 - r2) ** 2, 0.0) * grid.mask)
    return out


def weak_residual(u: ScalarField, prob: PLaplaceProblem, battery: Sequence[np.ndarray] | None = None) -> float:
    """max over test functions phi of |A(u; phi) - (rhs(u), phi)| / (|A|(u; phi) + (|rhs(u)|, |phi|)).

    A(u; phi) is the discrete form sum |grad u|^(p-2) grad u . grad phi
    (unregularized) that the solvers minimize against.
    """
    grid = prob.grid
    D = _gradient(grid)
    battery = battery if battery is not None else bump_battery(grid, prob.opts.battery_size, prob.opts.battery_seed)
    uv = D.to_vector(u.values)
    obj = PEnergy(D, prob.p, 0.0)
    flux = obj.flux(uv)
    rhs = D.to_vector(prob.rhs(u.values)) * grid.cell_volume
    if not (np.isfinite(rhs).all() and all(np.isfinite(fl).all() for fl in flux)):
        return float(np.inf)
    worst = 0.0
    for phi in battery:
        ph = D.to_vector(phi)
        a, mag = 0.0, 0.0
        for G, fl in zip(D.corner_ops, flux):
            gp = G @ ph
            a += float(fl.ravel() @ gp)
            mag += float(np.abs(fl.ravel()) @ np.abs(gp))
        load = float(rhs @ ph)
        denom = mag + float(np.abs(rhs) @ np.abs(ph))
        if denom > 0:
            worst = max(worst, abs(a - load) / denom)
    return worst


# --------------------------------------------------------------------------
# cutoff and Caccioppoli diagnostics


RAMP_KNEE = 0.2  # fraction of the transition spent in each quadratic end


def _ramp(t: np.ndarray, k: float = RAMP_KNEE) -> np.ndarray:
    """C^1 monotone ramp from 0 (t <= 0) to 1 (t >= 1): quadratic ends, linear middle."""
    t = np.clip(t, 0.0, 1.0)
    s = 1.0 / (1.0 - k)  # slope of the linear part
    lo = s * t**2 / (2 * k)
    mid = s * (t - k / 2)
    hi = 1.0 - s * (1 - t) ** 2 / (2 * k)
    return np.where(t < k, lo, np.where(t > 1 - k, hi, mid))


def cutoff(x0, r: float, grid: Grid) -> ScalarField:
    """eta = 1 on B(x0, r/3), 0 off B(x0, r/2), radial C^1 ramp between; |grad eta| <= 7.5/r."""
    x0 = np.asarray(x0, dtype=float)
    if r < 12 * grid.h:
        raise ValueError(f"radius {r:g} is below 12 cell spacings ({12 * grid.h:g})")
    if np.any(x0 - r / 2 < np.asarray(grid.lo)) or np.any(x0 + r / 2 > np.asarray(grid.hi)):
        raise ValueError("B(x0, r/2) must lie inside the bounding box")
    d = np.linalg.norm(grid.centers - x0, axis=-1)
    eta = _ramp((r / 2 - d) / (r / 6))
    return ScalarField(grid, eta)


def gradient_magnitude(u: ScalarField) -> np.ndarray:
    D = _gradient(u.grid)
    return D.to_array(D.magnitude(D.to_vector(u.values)))


def free_gradient_magnitude(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Central-difference |grad| of a field on the full box, one-sided at the box edge."""
    comps = np.gradient(values, *grid.spacing)
    comps = comps if isinstance(comps, list) else [comps]
    return np.sqrt(sum(c * c for c in comps))


@dataclass
class CaccioppoliTable:
    rows: list
    max_ratio: float
    trend_slope: float  # slope of log(max ratio at r) against log(1/r)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "max_ratio": self.max_ratio, "trend_slope": self.trend_slope}


def caccioppoli_report(
    u: ScalarField,
    p: float,
    rhs: str,
    centers: Sequence,
    radii: Sequence[float],
    q: float | None = None,
) -> CaccioppoliTable:
    """Ratios of the local gradient energy on B(x0, r/3) to the right side of the local bound.

    rhs = 'power': integral of u^(q+2) + r^-p * integral of u^p;
    rhs = 'exp': integral of u e^u + r^-p * integral of u^p;
    all integrals over B(x0, r/3) intersected with the domain.
    """
    grid = u.grid
    if rhs not in ("power", "exp"):
        raise ValueError("rhs must be 'power' or 'exp'")
    if rhs == "power" and q is None:
        raise ValueError("power case needs q")
    vals = np.maximum(u.values, 0.0)
    grad_p = gradient_magnitude(u) ** p
    first = vals ** (q + 2) if rhs == "power" else vals * np.exp(vals)
    up = vals**p
    rows = []
    by_r = {}
    for r in radii:
        rr = r / 3
        G, A, B = (ball_sums(a * grid.mask, grid, rr) * grid.cell_volume for a in (grad_p, first, up))
        for x in centers:
            i = grid.nearest_masked(x)
            lhs = float(G[i])
            bound = float(A[i] + r ** (-p) * B[i])
            ratio = lhs / bound if bound > 0 else 0.0
            rows.append({"center": [float(c) for c in x], "r": float(r), "lhs": lhs, "rhs": bound, "ratio": ratio})
            by_r[float(r)] = max(by_r.get(float(r), 0.0), ratio)
    rs = np.array(sorted(by_r))
    m = np.array([by_r[r] for r in rs])
    slope = 0.0
    if len(rs) >= 2 and np.all(m > 0):
        slope = float(np.polyfit(np.log(1 / rs), np.log(m), 1)[0])
    return CaccioppoliTable(rows, float(max(m.max(), 0.0)) if len(m) else 0.0, slope)


# --------------------------------------------------------------------------
# admissibility and the Morrey-gradient conclusion


def lambda_range(n: int, p: float, q: float, q_tilde: float) -> tuple[float, float] | None:
    """Admissible [lo, n] for lam in the power case, or None when the hypotheses are unsatisfiable."""
    if not (1 < p < n and q > 0):
        return None
    if q_tilde < max(p, q + 2):
        return None
    lo = max(n * (q + 2) / q_tilde, p * (n / q_tilde + 1))
    return (lo, float(n)) if lo <= n else None


def admissibility_reason(n: int, p: float, q: float, q_tilde: float) -> str:
    if not 1 < p < n:
        return f"p = {p:g} is outside (1, n = {n})"
    if not q > 0:
        return f"q = {q:g} must be positive"
    if q_tilde < max(p, q + 2):
        return f"q_tilde = {q_tilde:g} < max(p, q + 2) = {max(p, q + 2):g}"
    a, b = n * (q + 2) / q_tilde, p * (n / q_tilde + 1)
    if max(a, b) > n:
        which = "n(q+2)/q_tilde" if a >= b else "p(n/q_tilde + 1)"
        return f"{which} = {max(a, b):g} exceeds n = {n}"
    return "admissible"


def admissibility_table(n: int, ps: Sequence[float], qs: Sequence[float], q_tildes: Sequence[float]) -> list[dict]:
    rows = []
    for p in ps:
        for q in qs:
            for qt in q_tildes:
                rng = lambda_range(n, p, q, qt)
                rows.append(
                    {
                        "n": n,
                        "p": p,
                        "q": q,
                        "q_tilde": qt,
                        "admissible": rng is not None,
                        "lambda_min": None if rng is None else rng[0],
                        "reason": admissibility_reason(n, p, q, qt),
                    }
                )
    return rows


def gradient_morrey_check(
    u: ScalarField,
    p: float,
    lam: float,
    family: BallFamily,
    kind: str = "exp",
    q: float | None = None,
    q_tilde: float | None = None,
) -> SeminormReport:
    """Morrey norm of the discrete |grad u| in L^{p,lam}, after checking lam against the hypotheses."""
    n = u.grid.n
    if kind == "exp":
        if abs(lam - n) > 1e-12:
            raise ValueError(f"exponential case concludes lam = n = {n}, got {lam}")
    elif kind == "power":
        if q is None or q_tilde is None:
            raise ValueError("power case needs q and q_tilde")
        rng = lambda_range(n, p, q, q_tilde)
        if rng is None:
            raise ValueError(f"hypotheses unsatisfiable: {admissibility_reason(n, p, q, q_tilde)}")
        if not rng[0] <= lam <= rng[1]:
            raise ValueError(f"lam = {lam:g} outside the admissible range [{rng[0]:g}, {rng[1]:g}]")
    elif kind != "free":
        raise ValueError(f"unknown kind {kind!r}")
    g = ScalarField(u.grid, gradient_magnitude(u))
    rep = morrey_norm(g, MorreyIndex(p, lam), family)
    rep.kind = "gradient-morrey"
    return rep

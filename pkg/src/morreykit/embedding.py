"""Desk-scale probes of Sobolev-Morrey imbeddings and of five equivalent trace conditions.

For a measure nu = w dy on the domain and exponents 1 < p < min(n, q)
the probes estimate, over declared finite families of test fields and
sets, the constants of

  (i)   ||I_1 f||_{L^q(nu)} <= C ||f||_{L^p}
  (ii)  ||f||_{L^q(nu)} <= C ||grad f||_{L^p}         (f vanishing on the boundary)
  (iii) nu(K) <= C cap_p(K)^(q/p)                     (compact K)
  (iv)  nu(B(x, r)) <= C r^(q(n-p)/p)                 (balls inside the domain)
  (v)   nu(O)^(p/q-1) <= C lam_{p,nu}(O)              (open O)

Each estimate is a maximum of ratios, so it is a lower bound for the
true constant.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, stats

from .capacity import CompactSetSpec, variational_p_capacity
from .energy import DiscreteGradient, PEnergy, newton_minimize
from .field import BallFamily, Grid, ScalarField, ball_family, ball_sums
from .morrey import MorreyIndex, bmo_seminorm, morrey_norm
from .riesz import RieszKernelSpec, riesz_potential


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """nu = w dy with a cell density w >= 0 (per unit volume), plus optional point masses."""

    grid: Grid
    density: np.ndarray
    atoms: tuple = ()  # ((cell index tuple, mass), ...)
    name: str = "nu"

    def __post_init__(self):
        w = np.asarray(self.density, dtype=float)
        if w.shape != self.grid.shape:
            raise ValueError("density shape does not match the grid")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("density must be finite and nonnegative")
        for idx, m in self.atoms:
            if m < 0 or not self.grid.mask[tuple(idx)]:
                raise ValueError("atoms need nonnegative mass at masked cells")
        object.__setattr__(self, "density", np.where(self.grid.mask, w, 0.0))

    @classmethod
    def lebesgue(cls, grid: Grid) -> "MeasureSpec":
        return cls(grid, np.ones(grid.shape), name="lebesgue")

    @classmethod
    def zero(cls, grid: Grid) -> "MeasureSpec":
        return cls(grid, np.zeros(grid.shape), name="zero")

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, subsample: int = 4, name: str = "nu") -> "MeasureSpec":
        """Cell averages of fn over a subsample^n lattice of sub-cell midpoints."""
        offs = (np.arange(subsample) + 0.5) / subsample - 0.5
        acc = np.zeros(grid.shape)
        for shift in np.array(np.meshgrid(*[offs] * grid.n, indexing="ij")).reshape(grid.n, -1).T:
            acc += fn(grid.centers + shift * grid.spacing)
        return cls(grid, acc / subsample**grid.n, name=name)

    @classmethod
    def power_weight(cls, grid: Grid, s: float, center=None) -> "MeasureSpec":
        """|x - center|^(-s) dy."""
        c = np.zeros(grid.n) if center is None else np.asarray(center, dtype=float)
        return cls.from_function(grid, lambda x: np.linalg.norm(x - c, axis=-1) ** (-s), name=f"power(s={s:g})")

    @property
    def cell_mass(self) -> np.ndarray:
        m = self.density * self.grid.cell_volume
        for idx, a in self.atoms:
            m = m.copy()
            m[tuple(idx)] += a
        return m

    @property
    def mass(self) -> float:
        return float(self.cell_mass.sum())

    def of(self, cells: np.ndarray) -> float:
        return float(self.cell_mass[cells & self.grid.mask].sum())

    def integral(self, values: np.ndarray) -> float:
        return float(np.sum(self.cell_mass * values))


def _check_pq(n: int, p: float, q: float):
    if not 1 < p < min(n, q):
        raise ValueError(f"need 1 < p < min(n, q) = {min(n, q):g}, got p = {p:g}")


# --------------------------------------------------------------------------
# corpora


def corpus(grid: Grid, kind: str = "mixed", seed: int = 0, radial_base: float | None = None) -> list[tuple[str, ScalarField]]:
    """A fixed, seeded family of test fields on the grid.

    ``kind='mixed'``: ball indicators, radial powers |x|^(radial_base + 0.05 k)
    and random bumps.  ``kind='compact'``: C^1 bumps compactly supported
    inside the domain (for the Sobolev probes).
    """
    rng = np.random.default_rng(seed)
    pts = grid.centers
    rad = np.linalg.norm(pts, axis=-1)
    out = []
    dist = grid.boundary_distance()
    inner = np.argwhere(grid.mask & (dist > 9 * grid.h))
    if kind in ("mixed", "compact") and not len(inner):
        raise ValueError(f"grid {grid.shape} too coarse for the bump corpus (needs cells 9h inside the boundary)")
    if kind == "mixed":
        for r in (0.1, 0.25, 0.5):
            out.append((f"indicator(B(0,{r:g}))", ScalarField(grid, (rad < r).astype(float))))
        if radial_base is not None:
            for k in range(1, 5):
                e = radial_base + 0.05 * k
                out.append((f"radial({e:g})", ScalarField(grid, np.where(rad > 0, rad, grid.h) ** e)))
    if kind in ("mixed", "compact"):
        widths = (0.1, 0.2, 0.35, 0.5)
        out.append(("bump(0,0.3)", _bump(grid, np.zeros(grid.n), 0.3)))
        for i in range(8):
            c = pts[tuple(inner[rng.integers(len(inner))])]
            w = min(widths[i % len(widths)], float(dist[grid.index_of(c)]) * 0.95)
            # at least 8 cells across, so the bump is resolved
            out.append((f"bump({i})", _bump(grid, c, max(w, 8 * grid.h))))
    return out


def _bump(grid: Grid, c, w) -> ScalarField:
    r2 = np.sum((grid.centers - np.asarray(c)) ** 2, axis=-1) / w**2
    return ScalarField(grid, np.where(r2 < 1, (1 - r2) ** 2, 0.0))


# --------------------------------------------------------------------------
# Sobolev-Morrey imbedding


@dataclass
class ProbeResult:
    constant: float
    ratios: list
    target: str
    params: dict

    def to_dict(self) -> dict:
        return {"constant": self.constant, "ratios": self.ratios, "target": self.target, "params": self.params}


def sobolev_morrey_embedding_probe(
    grid: Grid, alpha: float, p: float, lam: float, family: BallFamily | None = None, seed: int = 0
) -> ProbeResult:
    """max over the corpus of ||I_alpha f||_target / ||f||_{L^{p,lam}}.

    For p < lam/alpha the target norm is the sum of the L^{lam p/(lam - alpha p), lam}
    and L^{p, lam - alpha p} norms; for p = lam/alpha it is the BMO seminorm.
    """
    if not 1 < p <= lam / alpha + 1e-12:
        raise ValueError(f"need 1 < p <= lam/alpha = {lam / alpha:g}, got p = {p:g}")
    family = family or ball_family(grid, max(1, grid.shape[0] // 16), 12, anchors=[np.zeros(grid.n)])
    src = MorreyIndex(p, lam)
    critical = abs(p - lam / alpha) < 1e-12
    spec = RieszKernelSpec(alpha)
    ratios = []
    for name, f in corpus(grid, "mixed", seed, radial_base=-lam / p):
        base = morrey_norm(f, src, family).value
        if base == 0:
            continue
        g = riesz_potential(f, spec)
        if critical:
            top = bmo_seminorm(g, family).value
        else:
            t1 = morrey_norm(g, MorreyIndex(lam * p / (lam - alpha * p), lam), family).value
            t2 = morrey_norm(g, MorreyIndex(p, lam - alpha * p), family).value
            top = t1 + t2
        ratios.append({"field": name, "ratio": top / base})
    target = "BMO" if critical else f"L^({lam * p / (lam - alpha * p):g},{lam:g}) + L^({p:g},{lam - alpha * p:g})"
    return ProbeResult(max(r["ratio"] for r in ratios), ratios, target, {"alpha": alpha, "p": p, "lambda": lam})


# --------------------------------------------------------------------------
# conditions (iv) and (iii)


def isocapacitary_check(nu: MeasureSpec, p: float, q: float, balls: BallFamily) -> list[dict]:
    """Ratios nu(B(x, r)) / r^(q(n-p)/p) over the family balls contained in the domain."""
    grid = nu.grid
    n = grid.n
    _check_pq(n, p, q)
    e = q * (n - p) / p
    dist = grid.boundary_distance()
    mass = nu.cell_mass
    rows = []
    sel = tuple(balls.center_index.T)
    for j, r in enumerate(balls.radii):
        sums = ball_sums(mass, grid, r)[sel]
        ok = dist[sel] + grid.h / 2 >= r
        for i in np.flatnonzero(ok):
            rows.append({"center": balls.centers[i].tolist(), "r": float(r), "mass": float(sums[i]), "ratio": float(sums[i] / r**e)})
    return rows


def compact_isocapacitary_check(
    nu: MeasureSpec, p: float, q: float, sets: Sequence[CompactSetSpec], capacities: dict | None = None
) -> list[dict]:
    """Ratios nu(K) / cap_p(K)^(q/p); ``capacities`` caches results by set id."""
    grid = nu.grid
    _check_pq(grid.n, p, q)
    capacities = {} if capacities is None else capacities
    rows = []
    for s in sets:
        if s.id not in capacities:
            capacities[s.id] = variational_p_capacity(s, grid, p)
        res = capacities[s.id]
        m = nu.of(s.cells(grid))
        rows.append({"set": s.id, "nu": m, "capacity": res.value, "ratio": m / res.value ** (q / p), "flags": res.flags})
    return rows


# --------------------------------------------------------------------------
# condition (v)


@dataclass
class EigenResult:
    value: float
    eigenfunction: ScalarField = field(repr=False)
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def faber_krahn_lambda(
    nu: MeasureSpec, p: float, O: np.ndarray | CompactSetSpec | None = None, tol: float = 1e-9, maxiter: int = 300, eps: float = 1e-6
) -> EigenResult:
    """inf of the p-energy over the p-th power nu-integral, for fields vanishing off O.

    Normalized inverse power iteration: v solves -Delta_p v = w |f|^(p-2) f,
    then f = v / ||v||_{L^p(nu)}.  Each component of O is handled
    separately; the result is the smallest quotient, taken at the best
    iterate (an upper bound of the discrete infimum).
    """
    grid = nu.grid
    if O is None:
        cells = grid.mask.copy()
    elif isinstance(O, CompactSetSpec):
        cells = O.cells(grid)
    else:
        cells = np.asarray(O, dtype=bool) & grid.mask
    if nu.of(cells) <= 0:
        raise ValueError("nu(O) must be positive")
    labels, count = ndimage.label(cells)
    best = None
    for k in range(1, count + 1):
        comp = labels == k
        if nu.of(comp) <= 0 or comp.sum() < 4:
            continue
        res = _eigen_component(nu, p, comp, tol, maxiter, eps)
        if best is None or res.value < best.value:
            best = res
    if best is None:
        raise ValueError("O has no component carrying nu-mass")
    return best


def _eigen_component(nu: MeasureSpec, p: float, comp: np.ndarray, tol, maxiter, eps) -> EigenResult:
    grid = nu.grid
    sub = Grid(grid.lo, grid.hi, grid.shape, comp, "component")
    D = DiscreteGradient(sub)
    m = D.to_vector(nu.cell_mass)
    exact = PEnergy(D, p)

    def quotient(f):
        den = float(np.sum(m * np.abs(f) ** p))
        return exact.energy(f) / den if den > 0 else np.inf

    d = D.to_vector(sub.boundary_distance())
    f = d / max(np.sum(m * d**p), 1e-300) ** (1 / p)
    best_q, best_f = quotient(f), f
    hist = [best_q]
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        b = m * np.sign(f) * np.abs(f) ** (p - 1)
        # start from the best multiple of f: c^(p-1) E(f) = <b, f>
        c = (float(b @ f) / exact.energy(f)) ** (1 / (p - 1))
        gscale = exact.energy(c * f) ** (1 / p) / max(sub.measure, 1e-300) ** (1 / p)
        obj = PEnergy(D, p, eps * gscale, b)
        v = newton_minimize(obj, c * f, tol=1e-10, maxiter=15).u
        v = np.maximum(v, 0.0)
        nrm = float(np.sum(m * v**p)) ** (1 / p)
        if nrm == 0:
            break
        f = v / nrm
        qv = quotient(f)
        hist.append(qv)
        if qv < best_q:
            if best_q - qv < tol * qv:
                best_q, best_f = qv, f
                converged = True
                break
            best_q, best_f = qv, f
        elif abs(qv - best_q) < tol * best_q:
            converged = True
            break
    return EigenResult(float(best_q), ScalarField(grid, D.to_array(best_f)), it, converged, hist)


def faber_krahn_check(nu: MeasureSpec, p: float, q: float, sets: Sequence[CompactSetSpec]) -> list[dict]:
    """Ratios nu(O)^(p/q - 1) / lam_{p,nu}(O) over the declared open sets."""
    grid = nu.grid
    _check_pq(grid.n, p, q)
    rows = []
    for s in sets:
        cells = s.cells(grid)
        m = nu.of(cells)
        if m <= 0:
            rows.append({"set": s.id, "nu": 0.0, "lambda": None, "ratio": 0.0})
            continue
        lam = faber_krahn_lambda(nu, p, cells)
        rows.append({"set": s.id, "nu": m, "lambda": lam.value, "ratio": m ** (p / q - 1) / lam.value, "converged": lam.converged})
    return rows


# --------------------------------------------------------------------------
# conditions (i), (ii) and the pointwise bridge


def bridge_constant(n: int) -> float:
    """Gamma(n/2) / (2 pi^(n/2)): |f| <= c_n I_1|grad f| for compactly supported C^1 f."""
    return math.gamma(n / 2) / (2 * math.pi ** (n / 2))


@dataclass
class OperatorProbe:
    riesz_constant: float
    sobolev_constant: float
    bridge_violation: float  # max over corpus of max(|f| - c_n I_1|grad f|) / ||f||_inf
    rows: list


def operator_embedding_probe(nu: MeasureSpec, p: float, q: float, seed: int = 0) -> OperatorProbe:
    """Corpus maxima of ||I_1 f||_{L^q(nu)}/||f||_{L^p} and ||f||_{L^q(nu)}/||grad f||_{L^p}."""
    grid = nu.grid
    n = grid.n
    _check_pq(n, p, q)
    D = DiscreteGradient(grid)
    energy = PEnergy(D, p)
    spec = RieszKernelSpec(1.0)
    cn = bridge_constant(n)
    rows = []
    r1 = r2 = 0.0
    viol = -np.inf
    for name, f in corpus(grid, "mixed", seed, radial_base=-(n - 1) / p + 0.3):
        lp = float(np.sum(np.abs(f.values) ** p) * grid.cell_volume) ** (1 / p)
        if lp == 0:
            continue
        If = riesz_potential(f.abs(), spec).values
        a = nu.integral(np.abs(If) ** q) ** (1 / q) / lp
        row = {"field": name, "riesz_ratio": a}
        r1 = max(r1, a)
        if name.startswith("bump"):
            grad_lp = energy.energy(D.to_vector(f.values)) ** (1 / p)
            b = nu.integral(np.abs(f.values) ** q) ** (1 / q) / grad_lp
            r2 = max(r2, b)
            gm = ScalarField(grid, D.to_array(D.magnitude(D.to_vector(f.values))))
            bridge = cn * riesz_potential(gm, spec).values
            v = float(np.max((np.abs(f.values) - bridge)[grid.mask])) / f.max_abs()
            viol = max(viol, v)
            row.update({"sobolev_ratio": b, "bridge_violation": v})
        rows.append(row)
    return OperatorProbe(r1, r2, float(viol), rows)


def holder_step_gap(nu: MeasureSpec, f: ScalarField, O: np.ndarray, p: float, q: float) -> float:
    """Relative slack of int_O |f|^p dnu <= (int_O |f|^q dnu)^(p/q) nu(O)^(1-p/q); >= 0 when it holds."""
    m = nu.cell_mass * (O & nu.grid.mask)
    a = float(np.sum(m * np.abs(f.values) ** p))
    rhs = float(np.sum(m * np.abs(f.values) ** q)) ** (p / q) * float(m.sum()) ** (1 - p / q)
    return (rhs - a) / max(rhs, 1e-300)


# --------------------------------------------------------------------------
# the five-constant report and the measure sweep


@dataclass
class EquivalenceReport:
    measure: str
    p: float
    q: float
    constants: dict  # keys i..v
    inventories: dict
    tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for k, v in self.constants.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"constant ({k}) must be finite and nonnegative, got {v}")

    def to_dict(self) -> dict:
        return {"measure": self.measure, "p": self.p, "q": self.q, "constants": self.constants, "inventories": self.inventories}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def default_sets(grid: Grid) -> list[CompactSetSpec]:
    """Balls about the origin, off-center balls, a box and a pair of balls."""
    out = [CompactSetSpec.ball((0.0,) * grid.n, r) for r in (0.1, 0.2, 0.4)]
    out.append(CompactSetSpec.ball((0.4,) + (0.0,) * (grid.n - 1), 0.2))
    out.append(CompactSetSpec.box((-0.3,) * grid.n, (0.3,) * grid.n))
    out.append(CompactSetSpec.two_balls(((-0.4,) + (0.0,) * (grid.n - 1), 0.15), ((0.4,) + (0.0,) * (grid.n - 1), 0.15)))
    return out


def equivalence_report(
    nu: MeasureSpec,
    p: float,
    q: float,
    balls: BallFamily | None = None,
    sets: Sequence[CompactSetSpec] | None = None,
    capacities: dict | None = None,
    seed: int = 0,
) -> EquivalenceReport:
    grid = nu.grid
    _check_pq(grid.n, p, q)
    balls = balls or ball_family(grid, max(1, grid.shape[0] // 16), 10, anchors=[np.zeros(grid.n)])
    sets = list(sets) if sets is not None else default_sets(grid)
    op = operator_embedding_probe(nu, p, q, seed)
    t3 = compact_isocapacitary_check(nu, p, q, sets, capacities)
    t4 = isocapacitary_check(nu, p, q, balls)
    t5 = faber_krahn_check(nu, p, q, sets)
    consts = {
        "i": op.riesz_constant,
        "ii": op.sobolev_constant,
        "iii": max(r["ratio"] for r in t3),
        "iv": max(r["ratio"] for r in t4),
        "v": max(r["ratio"] for r in t5),
    }
    inv = {
        "corpus": [r["field"] for r in op.rows],
        "sets": [s.id for s in sets],
        "balls": balls.describe(),
    }
    return EquivalenceReport(nu.name, p, q, consts, inv, {"operator": op.rows, "iii": t3, "iv": t4, "v": t5})


@dataclass
class SweepResult:
    s_values: list
    constants: dict  # key -> list over s
    kendall: dict  # "i-ii" -> tau
    reports: list = field(default_factory=list, repr=False)

    @property
    def min_tau(self) -> float:
        return min(self.kendall.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = sorted(self.constants)
        w.writerow(["s"] + keys)
        for j, s in enumerate(self.s_values):
            w.writerow([repr(float(s))] + [repr(float(self.constants[k][j])) for k in keys])
        return buf.getvalue()


def measure_sweep(grid: Grid, s_values: Sequence[float], p: float = 1.5, q: float = 3.0, seed: int = 0) -> SweepResult:
    """Five constants across nu_s = |x|^(-s) dy and their pairwise Kendall rank correlations."""
    caps: dict = {}
    balls = ball_family(grid, max(1, grid.shape[0] // 16), 10, anchors=[np.zeros(grid.n)])
    sets = default_sets(grid)
    reports = [equivalence_report(MeasureSpec.power_weight(grid, s), p, q, balls, sets, caps, seed) for s in s_values]
    keys = ["i", "ii", "iii", "iv", "v"]
    consts = {k: [r.constants[k] for r in reports] for k in keys}
    tau = {}
    for a in range(5):
        for b in range(a + 1, 5):
            t = stats.kendalltau(consts[keys[a]], consts[keys[b]]).statistic
            tau[f"{keys[a]}-{keys[b]}"] = float(t)
    return SweepResult([float(s) for s in s_values], consts, tau, reports)

"""Named experiment suites and the runner that turns a config into report files.

Each suite reads its parameters (defaults merged with ``[params]``), runs
the numerics and records checks, CSV tables and ``.fld`` snapshots on a
:class:`SuiteContext`.  :func:`run_experiment` writes ``summary.json``,
``config.toml`` and the tables into the output directory; the summary
contains no timings or paths, so a rerun with the same config and seed is
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla
from scipy.special import jn_zeros

from .capacity import CapacityOptions, CompactSetSpec, riesz_morrey_capacity, variational_p_capacity
from .config import ConfigError, ExperimentConfig, stream, stream_seed
from .embedding import MeasureSpec, faber_krahn_lambda, measure_sweep, operator_embedding_probe
from .embedding import sobolev_morrey_embedding_probe
from .field import Grid, ScalarField, ball_family, make_grid, sample, write_field
from .lane_emden import (
    PLaplaceProblem,
    SolverOptions,
    admissibility_table,
    bump_battery,
    caccioppoli_report,
    gradient_morrey_check,
    solve_dirichlet_p_laplace,
    solve_lane_emden_exp,
    solve_lane_emden_power,
    weak_residual,
)
from .morrey import MorreyIndex, holder_seminorm, morrey_norm
from .quasicont import (
    TruncationParams,
    admissible_beta_max,
    build_representative,
    lip_delta_check,
    loglog_slope,
    make_schedule,
    truncation_errors,
)
from .riesz import potential_at, riesz_potential, unit_ball_volume


def to_plain(obj):
    """JSON-ready copy: numpy scalars and arrays become Python numbers and lists."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


@dataclass
class Check:
    criterion: str
    description: str
    value: float
    bound: str
    passed: bool

    def to_dict(self) -> dict:
        return to_plain(self.__dict__)


@dataclass
class SuiteContext:
    config: ExperimentConfig
    params: dict
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    texts: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return self.config.grid.resolution

    @property
    def seed(self) -> int:
        return self.config.seed

    def grid(self, resolution: int | None = None) -> Grid:
        return self.config.grid.build(resolution)

    def tol(self, x: float) -> float:
        return x * self.config.tol_scale

    def stream_seed(self, label: str) -> int:
        return stream_seed(self.seed, f"{self.config.experiment}/{label}")

    def check(self, criterion: str, description: str, value: float, bound: str, passed: bool):
        self.checks.append(Check(criterion, description, float(value), bound, bool(passed)))

    def at_most(self, criterion: str, description: str, value: float, limit: float):
        self.check(criterion, description, value, f"<= {limit:.6g}", value <= limit)

    def at_least(self, criterion: str, description: str, value: float, limit: float):
        self.check(criterion, description, value, f">= {limit:.6g}", value >= limit)

    def table(self, name: str, rows: list[dict]):
        self.tables[name] = rows

    def snapshot(self, name: str, f: ScalarField):
        self.fields[name] = f


@dataclass(frozen=True)
class Suite:
    name: str
    description: str
    criteria: tuple
    defaults: dict
    run: Callable[[SuiteContext], None]
    quick: dict = field(default_factory=dict)  # cheap overrides used by the determinism suite
    dims: tuple = (2,)
    unit_ball: bool = True  # needs the default unit-ball domain


REGISTRY: dict[str, Suite] = {}


def register(name, description, criteria, defaults, quick=None, dims=(2,), unit_ball=True):
    def deco(fn):
        REGISTRY[name] = Suite(name, description, tuple(criteria), dict(defaults), fn, dict(quick or {}), dims, unit_ball)
        return fn

    return deco


def _ladder(base: int, levels: int) -> list[int]:
    return [base * 2**k for k in range(levels)]


def _rel_spread(values) -> float:
    """max |v / v_0 - 1| along a resolution ladder."""
    v = np.asarray(values, dtype=float)
    if v[0] == 0:
        return 0.0 if np.all(v == 0) else math.inf
    return float(np.max(np.abs(v / v[0] - 1)))


def _family(grid: Grid, count: int = 12, div: int = 16):
    return ball_family(grid, max(1, grid.shape[0] // div), count, anchors=[np.zeros(grid.n)])


def _radial(grid: Grid, exponent: float) -> ScalarField:
    return sample(lambda x: np.linalg.norm(x, axis=-1) ** exponent, grid)


# --------------------------------------------------------------------------
# suites, one per acceptance criterion


@register(
    "riesz-oracle",
    "I_alpha of the unit-ball indicator at the origin against |S^(n-1)|/alpha; fast vs direct sums",
    ["1"],
    {"alpha": 1.0, "oracle_factor": 4, "oracle_tol": 0.02, "agreement_tol": 1e-10},
    quick={"resolution": 16, "oracle_factor": 2},
    dims=(2, 3),
)
def _riesz_oracle(ctx: SuiteContext):
    p = ctx.params
    alpha = p["alpha"]
    g = ctx.grid(ctx.resolution * p["oracle_factor"])
    n = g.n
    one = ScalarField(g, g.mask.astype(float))
    val = float(potential_at(one, alpha, np.zeros((1, n)))[0])
    exact = n * unit_ball_volume(n) / alpha
    rel = abs(val - exact) / exact
    ctx.at_most("1", f"|I_alpha 1_B(0) - {exact:.6f}| / exact at {g.shape[0]}^{n}", rel, ctx.tol(p["oracle_tol"]))

    g0 = ctx.grid()
    rng = stream(ctx.seed, "riesz-oracle/field")
    f = ScalarField(g0, rng.uniform(-1, 1, g0.shape) * g0.mask)
    fast = riesz_potential(f, alpha, "fast").values
    direct = riesz_potential(f, alpha, "direct").values
    agree = float(np.max(np.abs(fast - direct)) / np.max(np.abs(direct)))
    ctx.at_most("1", f"fast vs direct relative sup difference at {g0.shape[0]}^{n}", agree, ctx.tol(p["agreement_tol"]))
    ctx.metrics.update({"potential_at_origin": val, "exact": exact})
    ctx.table("riesz_oracle", [{"resolution": g.shape[0], "computed": val, "exact": exact, "relative_error": rel}])
    ctx.snapshot("potential", riesz_potential(f, alpha))


@register(
    "morrey-borderline",
    "Morrey norm of |x|^(-lam0/p) across a resolution ladder for lam0, lam0 + 0.3 and lam0 - 0.3",
    ["2"],
    {"p": 2.0, "lam0": 1.0, "shift": 0.3, "levels": 3, "radius_count": 12, "stable_tol": 0.10, "growth": 2.0},
    quick={"resolution": 16, "levels": 2},
)
def _morrey_borderline(ctx: SuiteContext):
    p = ctx.params
    lam0, s = p["lam0"], p["shift"]
    lams = {"borderline": lam0, "above": lam0 + s, "below": lam0 - s}
    norms = {k: [] for k in lams}
    rows = []
    for N in _ladder(ctx.resolution, p["levels"]):
        g = ctx.grid(N)
        f = _radial(g, -lam0 / p["p"])
        fam = _family(g, p["radius_count"])
        for k, lam in lams.items():
            v = morrey_norm(f, MorreyIndex(p["p"], lam), fam).value
            norms[k].append(v)
            rows.append({"resolution": N, "lam": lam, "norm": v})
    ctx.table("morrey_norms", rows)
    for k in ("borderline", "above"):
        ctx.at_most("2", f"resolution spread of the norm at lam = {lams[k]:g}", _rel_spread(norms[k]), ctx.tol(p["stable_tol"]))
    growth = float(np.min(np.asarray(norms["below"][1:]) / np.asarray(norms["below"][:-1])))
    ctx.at_least("2", f"smallest per-refinement growth at lam = {lams['below']:g}", growth, p["growth"])
    ctx.metrics["norms"] = norms


def _lip_fields(grid: Grid, rng_seed: int, count: int) -> list[tuple[str, ScalarField]]:
    """Seeded bounded fields defined in continuum terms, so every resolution samples the same function."""
    rng = np.random.default_rng(rng_seed)
    out = []
    kinds = ["ball", "box"] + ["bump"] * max(0, count - 2)
    for i, kind in enumerate(kinds[:count]):
        c = rng.uniform(-0.35, 0.35, grid.n)
        if kind == "ball":
            r = rng.uniform(0.15, 0.35)
            f = sample(lambda x: (np.linalg.norm(x - c, axis=-1) < r).astype(float), grid)
            name = f"ball({i})"
        elif kind == "box":
            w = rng.uniform(0.1, 0.3, grid.n)
            f = sample(lambda x: np.all(np.abs(x - c) < w, axis=-1).astype(float), grid)
            name = f"box({i})"
        else:
            w, a = rng.uniform(0.2, 0.5), rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
            f = sample(lambda x: a * np.clip(1 - np.sum((x - c) ** 2, axis=-1) / w**2, 0, None) ** 2, grid)
            name = f"bump({i})"
        out.append((name, f))
    return out


@register(
    "lip-delta",
    "Hölder-delta seminorm of I_alpha f, delta = alpha - lam/p, on seeded bounded fields across resolutions",
    ["3"],
    {"alpha": 1.2, "p": 2.0, "lam": 1.0, "fields": 5, "pairs": 4000, "levels": 3, "stable_tol": 0.15},
    quick={"resolution": 16, "levels": 2, "fields": 2, "pairs": 500},
)
def _lip_delta(ctx: SuiteContext):
    p = ctx.params
    idx = MorreyIndex(p["p"], p["lam"])
    fseed, pseed = ctx.stream_seed("fields"), ctx.stream_seed("pairs")
    values: dict[str, list] = {}
    rows = []
    for N in _ladder(ctx.resolution, p["levels"]):
        g = ctx.grid(N)
        for name, f in _lip_fields(g, fseed, p["fields"]):
            rep = lip_delta_check(f, p["alpha"], idx, pairs=p["pairs"], seed=pseed)
            values.setdefault(name, []).append(rep.value)
            rows.append({"resolution": N, "field": name, "seminorm": rep.value, "delta": rep.extra["delta"]})
    ctx.table("lip_delta", rows)
    for name, v in values.items():
        ctx.at_most("3", f"resolution spread of the Hölder seminorm for {name}", _rel_spread(v), ctx.tol(p["stable_tol"]))


def _truncation_params(p: dict) -> TruncationParams:
    bmax = admissible_beta_max(p["alpha"], p["p"], p["q"], p["lam"])
    return TruncationParams(2, p["alpha"], p["p"], p["lam"], p["q"], p["beta_factor"] * bmax, p["gamma"])


@register(
    "truncation-decay",
    "Log-log slope of ||f - f_r|| in the target Morrey space against r for the borderline field",
    ["4"],
    {"alpha": 0.5, "p": 2.0, "q": 1.5, "lam": 1.0, "beta_factor": 0.9, "gamma": 0.1, "resolution_factor": 2,
     "radii_exponents": [1, 2, 3, 4, 5], "slope_factor": 0.8},
    quick={"resolution": 16, "resolution_factor": 1},
)
def _truncation_decay(ctx: SuiteContext):
    p = ctx.params
    prm = _truncation_params(p)
    g = ctx.grid(ctx.resolution * p["resolution_factor"])
    f = _radial(g, -p["lam"] / p["p"])
    radii = [2.0 ** -k for k in p["radii_exponents"]]
    errs = truncation_errors(f, radii, prm, _family(g))
    slope = loglog_slope(*zip(*errs))
    ctx.table("truncation", [{"r": r, "error": e} for r, e in errs])
    ctx.metrics.update({"slope": slope, "beta": prm.beta, "mu": prm.mu})
    ctx.at_least("4", f"log-log slope of the truncation error (beta = {prm.beta:.6g})", slope, p["slope_factor"] * prm.beta)


@register(
    "holder-representative",
    "Hölder representative of I_alpha f for a singular field: capacity of O, agreement off O, seminorm growth",
    ["5"],
    {"alpha": 0.5, "p": 2.0, "q": 1.5, "lam": 1.6, "beta_factor": 0.9, "gamma": 0.1, "eps": 0.1,
     "field_exponent": -0.8, "levels": 2, "schedule_J": 2, "radius_count": 10, "cap_iterations": 100,
     "dual_iterations": 100, "holder_pairs": 4000, "stable_tol": 0.20, "growth": 2.0},
    quick={"resolution": 16, "cap_iterations": 10, "dual_iterations": 10, "holder_pairs": 500},
)
def _holder_representative(ctx: SuiteContext):
    p = ctx.params
    prm = _truncation_params(p)
    opts = CapacityOptions(iterations=p["cap_iterations"], dual_iterations=p["dual_iterations"])
    pseed = ctx.stream_seed("pairs")
    hh, hg, rows = [], [], []
    for N in _ladder(ctx.resolution, p["levels"]):
        g = ctx.grid(N)
        f = _radial(g, p["field_exponent"])
        fam = _family(g, p["radius_count"])
        rep = build_representative(
            f, prm, make_schedule(p["gamma"], p["schedule_J"]), p["eps"], fam, opts, holder_pairs=p["holder_pairs"], seed=pseed
        )
        G = riesz_potential(f, prm.alpha)
        off = g.mask & ~rep.exceptional
        exact = bool(np.array_equal(rep.representative.values[off], G.values[off]))
        hol_g = holder_seminorm(G, p["gamma"], p["holder_pairs"], pseed).value
        hh.append(rep.holder.value)
        hg.append(hol_g)
        ctx.at_most("5", f"certified capacity upper bound of O at {N}^2 (below eps)", rep.capacity_upper, p["eps"] * (1 - 1e-12))
        ctx.check("5", f"h equals I_alpha f bit for bit off O at {N}^2", float(exact), "== 1", exact)
        rows.append({"resolution": N, "J": rep.J, "exceptional_cells": int(rep.exceptional.sum()),
                     "capacity": rep.capacity_value, "holder_h": hh[-1], "holder_g": hol_g, "flags": ";".join(rep.flags)})
        ctx.snapshot(f"representative-{N}", rep.representative)
        ctx.snapshot(f"exceptional-{N}", ScalarField(g, rep.exceptional.astype(float)))
    ctx.table("representative", rows)
    ctx.at_most("5", "resolution spread of the Hölder-gamma seminorm of h", _rel_spread(hh), ctx.tol(p["stable_tol"]))
    ctx.at_least("5", "per-refinement growth of the Hölder-gamma seminorm of I_alpha f",
                 float(np.min(np.asarray(hg[1:]) / np.asarray(hg[:-1]))), p["growth"])


def _condenser_capacity(n: int, p: float, r: float, R: float) -> float:
    """p-capacity of the closed ball B(0, r) relative to B(0, R), from the radial minimizer."""
    e = (p - n) / (p - 1)
    area = n * unit_ball_volume(n)
    return area * ((n - p) / (p - 1)) ** (p - 1) / (r**e - R**e) ** (p - 1)


@register(
    "capacity-oracles",
    "Variational p-capacity of a ball vs the radial closed form; Riesz-Morrey capacity monotone on nested sets",
    ["6"],
    {"p_var": 1.5, "radius_var": 0.25, "var_factor": 4, "var_tol": 0.10, "alpha": 1.5, "p": 1.2, "rm_factor": 2,
     "radius_count": 8, "monotone_tol": 0.02,
     "pairs": [["ball(center=0.0,0.0;radius=0.1;closed=1)", "ball(center=0.0,0.0;radius=0.2;closed=1)", 2.0],
               ["ball(center=0.0,0.0;radius=0.2;closed=1)", "ball(center=0.0,0.0;radius=0.4;closed=1)", 1.5],
               ["annulus(center=0.0,0.0;inner=0.2;outer=0.3)", "ball(center=0.0,0.0;radius=0.3;closed=1)", 1.5]]},
    quick={"resolution": 16, "var_factor": 1, "rm_factor": 1, "radius_count": 4},
)
def _capacity_oracles(ctx: SuiteContext):
    p = ctx.params
    g = ctx.grid(ctx.resolution * p["var_factor"])
    res = variational_p_capacity(CompactSetSpec.ball((0.0,) * g.n, p["radius_var"]), g, p["p_var"])
    exact = _condenser_capacity(g.n, p["p_var"], p["radius_var"], 1.0)
    rel = abs(res.value - exact) / exact
    ctx.at_most("6", f"variational capacity vs closed form {exact:.6f} at {g.shape[0]}^2", rel, ctx.tol(p["var_tol"]))
    results = [("variational", res)]
    rows = [{"set": res.set_id, "kind": "variational", "lam": "", "value": res.value, "upper": res.upper_bound,
             "lower": res.lower_bound, "exact": exact}]

    g2 = ctx.grid(ctx.resolution * p["rm_factor"])
    fam = _family(g2, p["radius_count"])
    cache = {}
    for inner, outer, lam in p["pairs"]:
        idx = MorreyIndex(p["p"], float(lam))
        vals = []
        for sid in (inner, outer):
            key = (sid, float(lam))
            if key not in cache:
                cache[key] = riesz_morrey_capacity(CompactSetSpec.from_id(sid), p["alpha"], idx, fam)
                r = cache[key]
                results.append((sid, r))
                rows.append({"set": sid, "kind": "riesz-morrey", "lam": lam, "value": r.value, "upper": r.upper_bound,
                             "lower": r.lower_bound, "exact": ""})
            vals.append(cache[key].value)
        ctx.at_most("6", f"C({inner}) / C({outer}) at lam = {lam:g}", vals[0] / vals[1], 1 + ctx.tol(p["monotone_tol"]))
    worst = min(r.upper_bound - r.value for _, r in results)
    ctx.at_least("6", "smallest (certified upper bound - value) over all capacity results", worst, 0.0)
    ctx.table("capacities", rows)
    ctx.snapshot("variational-potential", res.density)


@register(
    "lane-emden",
    "Manufactured p-Laplace solve, power-case battery and Caccioppoli table, exponential-case gradient Morrey norm",
    ["7"],
    {"p": 2.0, "q": 1.0, "resolution_factor": 2, "manufactured_tol": 0.01, "battery_size": 50, "residual_tol": 1e-4,
     "centers": [[0.0, 0.0], [0.5, 0.0], [0.0, -0.5], [-0.35, 0.35], [0.6, 0.6]], "radii": [0.1, 0.2, 0.4, 0.8],
     "ratio_max": 20.0, "slope_max": 0.2, "exp_levels": 2, "morrey_tol": 0.25},
    quick={"resolution": 16, "resolution_factor": 1, "battery_size": 5, "exp_levels": 1},
)
def _lane_emden(ctx: SuiteContext):
    p = ctx.params
    N = ctx.resolution * p["resolution_factor"]
    sq = make_grid([(0.0, 1.0)] * 2, N)
    exact = sample(lambda x: np.prod(np.sin(np.pi * x), axis=-1), sq)
    u = solve_dirichlet_p_laplace(exact * (2 * np.pi**2), 2.0)
    err = float(np.max(np.abs(u.values - exact.values)[sq.mask])) / exact.max_abs()
    ctx.at_most("7", f"manufactured p = 2 solve, relative max error at {N}^2", err, ctx.tol(p["manufactured_tol"]))

    g = ctx.grid(N)
    opts = SolverOptions(battery_size=p["battery_size"], battery_seed=ctx.stream_seed("battery"))
    prob = PLaplaceProblem(g, p["p"], "power", p["q"], opts=opts)
    rep = solve_lane_emden_power(prob)
    res = weak_residual(rep.u, prob, bump_battery(g, p["battery_size"], opts.battery_seed))
    ctx.check("7", "power case converged", float(rep.converged), "== 1", rep.converged)
    ctx.at_most("7", f"power case weak residual over {p['battery_size']} test functions", res, ctx.tol(p["residual_tol"]))
    ctx.at_least("7", "power case min u / max u", float(rep.u.masked.min()) / rep.u.max_abs(), 0.0)
    table = caccioppoli_report(rep.u, p["p"], "power", p["centers"], p["radii"], q=p["q"])
    ctx.at_most("7", "Caccioppoli max ratio", table.max_ratio, p["ratio_max"])
    ctx.at_most("7", "Caccioppoli trend slope against log(1/r)", table.trend_slope, p["slope_max"])
    ctx.table("caccioppoli", [{"x": r["center"][0], "y": r["center"][1], "r": r["r"], "lhs": r["lhs"], "rhs": r["rhs"],
                               "ratio": r["ratio"]} for r in table.rows])
    ctx.snapshot("power-u", rep.u)

    norms = []
    for M in _ladder(ctx.resolution, p["exp_levels"]):
        ge = ctx.grid(M)
        er = solve_lane_emden_exp(PLaplaceProblem(ge, p["p"], "exp"))
        norms.append(gradient_morrey_check(er.u, p["p"], float(ge.n), _family(ge), kind="exp").value)
    ctx.table("exp_gradient_morrey", [{"resolution": M, "norm": v} for M, v in zip(_ladder(ctx.resolution, p["exp_levels"]), norms)])
    ctx.check("7", "exponential case gradient Morrey norm finite", norms[-1], "finite", all(map(math.isfinite, norms)))
    ctx.at_most("7", "resolution spread of the exponential-case gradient Morrey norm", _rel_spread(norms), ctx.tol(p["morrey_tol"]))
    ctx.metrics.update({"power_outer_iterations": rep.outer_iterations, "exp_gradient_norms": norms})


def dirichlet_laplacian(grid: Grid) -> sparse.csr_matrix:
    """Five-point (seven-point in 3D) Dirichlet Laplacian on the masked cells, zero outside."""
    m = int(grid.mask.sum())
    idx = -np.ones(grid.shape, dtype=np.int64)
    idx[grid.mask] = np.arange(m)
    rows, cols, vals = [], [], []
    diag = np.zeros(m)
    for k, h in enumerate(grid.spacing):
        for shift in (1, -1):
            nb = np.roll(idx, shift, axis=k)
            edge = [slice(None)] * grid.n
            edge[k] = 0 if shift == 1 else -1
            nb[tuple(edge)] = -1
            here = idx[grid.mask]
            there = nb[grid.mask]
            diag += 1 / h**2
            ok = there >= 0
            rows.append(here[ok])
            cols.append(there[ok])
            vals.append(np.full(ok.sum(), -1 / h**2))
    rows.append(np.arange(m))
    cols.append(np.arange(m))
    vals.append(diag)
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))


@register(
    "embedding-equivalence",
    "Five condition constants over the measure ladder |x|^-s dy, Faber-Krahn vs an eigensolve, pointwise bridge",
    ["8"],
    {"p": 1.5, "q": 3.0, "s_values": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5], "tau_min": 0.7, "fk_factor": 2,
     "fk_tol": 0.03, "bridge_tol": 0.05},
    quick={"resolution": 32, "fk_factor": 1, "s_values": [0.0, 0.5, 1.0]},
)
def _embedding_equivalence(ctx: SuiteContext):
    p = ctx.params
    g = ctx.grid()
    sw = measure_sweep(g, p["s_values"], p["p"], p["q"], seed=ctx.stream_seed("corpus"))
    ctx.texts["sweep.csv"] = sw.to_csv()
    ctx.table("kendall", [{"pair": k, "tau": v} for k, v in sorted(sw.kendall.items())])
    ctx.at_least("8", "smallest pairwise Kendall tau across the measure ladder", sw.min_tau, p["tau_min"])

    gf = ctx.grid(ctx.resolution * p["fk_factor"])
    fk = faber_krahn_lambda(MeasureSpec.lebesgue(gf), 2.0)
    L = dirichlet_laplacian(gf)
    # ARPACK draws a random start vector unless one is given
    oracle = float(spla.eigsh(L, k=1, sigma=0, which="LM", v0=np.ones(L.shape[0]))[0][0])
    rel = abs(fk.value - oracle) / oracle
    ctx.at_most("8", f"Faber-Krahn p = 2 vs eigensolve at {gf.shape[0]}^2", rel, ctx.tol(p["fk_tol"]))
    ctx.metrics.update({"fk_value": fk.value, "eigensolve": oracle, "bessel_zero_squared": float(jn_zeros(0, 1)[0] ** 2)})

    probe = operator_embedding_probe(MeasureSpec.lebesgue(g), p["p"], p["q"], seed=ctx.stream_seed("corpus"))
    ctx.at_most("8", "max over the corpus of (|f| - c_n I_1|grad f|) / max|f|", probe.bridge_violation, ctx.tol(p["bridge_tol"]))
    ctx.table("operator_probe", probe.rows)


@register(
    "determinism",
    "Runs every other suite twice (cheap settings) and compares the summary.json bytes",
    ["9"],
    {"suites": []},
)
def _determinism(ctx: SuiteContext):
    names = ctx.params["suites"] or [k for k in sorted(REGISTRY) if k != "determinism"]
    unknown = [k for k in names if k not in REGISTRY or k == "determinism"]
    if unknown:
        raise ConfigError(f"determinism: unknown or recursive suites {unknown}")
    root = Path(ctx.config.out) / "reruns"
    rows = []
    for name in names:
        quick = dict(REGISTRY[name].quick)
        res = quick.pop("resolution", ctx.resolution)
        digests = []
        for run in ("a", "b"):
            cfg = ExperimentConfig(name, seed=ctx.seed, out=str(root / name / run), tol_scale=ctx.config.tol_scale,
                                   grid=replace(ctx.config.grid, resolution=res), params=quick)
            run_experiment(cfg)
            digests.append(hashlib.sha256((Path(cfg.out) / "summary.json").read_bytes()).hexdigest())
        same = digests[0] == digests[1]
        rows.append({"suite": name, "sha256_a": digests[0], "sha256_b": digests[1], "identical": same})
        ctx.check("9", f"{name} summary.json identical across reruns", float(same), "== 1", same)
    ctx.table("determinism", rows)


# --------------------------------------------------------------------------
# further suites


@register(
    "admissibility",
    "Admissible lambda ranges of the power-case gradient Morrey conclusion over a (p, q, q_tilde) grid",
    [],
    {"n": 2, "ps": [1.2, 1.5, 1.8], "qs": [0.5, 1.0, 2.0], "q_tildes": [3.0, 4.0, 6.0, 8.0]},
)
def _admissibility(ctx: SuiteContext):
    p = ctx.params
    rows = admissibility_table(p["n"], p["ps"], p["qs"], p["q_tildes"])
    ctx.table("admissibility", rows)
    ok = all(r["lambda_min"] <= r["n"] for r in rows if r["admissible"])
    ctx.check("-", "every admissible row has lambda_min <= n", float(ok), "== 1", ok)
    ctx.metrics["admissible_rows"] = sum(r["admissible"] for r in rows)


@register(
    "sobolev-morrey-probe",
    "Corpus maximum of ||I_alpha f||_target / ||f||_{L^{p,lam}} across two resolutions, plus the BMO endpoint",
    [],
    {"alpha": 0.5, "p": 2.0, "lam": 1.5, "levels": 2, "stable_tol": 0.25},
    quick={"resolution": 32, "levels": 1},
)
def _sobolev_morrey(ctx: SuiteContext):
    p = ctx.params
    consts, rows = [], []
    for N in _ladder(ctx.resolution, p["levels"]):
        g = ctx.grid(N)
        r = sobolev_morrey_embedding_probe(g, p["alpha"], p["p"], p["lam"], seed=ctx.stream_seed("corpus"))
        consts.append(r.constant)
        end = sobolev_morrey_embedding_probe(g, p["alpha"], p["lam"] / p["alpha"], p["lam"], seed=ctx.stream_seed("corpus"))
        rows.append({"resolution": N, "constant": r.constant, "target": r.target, "bmo_constant": end.constant})
    ctx.table("probe", rows)
    ctx.at_most("-", "resolution spread of the imbedding constant", _rel_spread(consts), ctx.tol(p["stable_tol"]))
    ctx.check("-", "BMO endpoint constant finite", rows[-1]["bmo_constant"], "finite", math.isfinite(rows[-1]["bmo_constant"]))


# --------------------------------------------------------------------------
# runner


@dataclass
class RunResult:
    status: int  # 0 all checks pass, 1 some check failed
    out: Path
    checks: list


def _unit_ball_mask(n: int) -> str:
    return f"ball(center={','.join(['0.0'] * n)};radius=1.0;closed=0)"


def _is_unit_ball(spec) -> bool:
    n = len(spec.bbox)
    return spec.mask == _unit_ball_mask(n) and all(list(map(float, ax)) == [-1.0, 1.0] for ax in spec.bbox)


def resolve_params(cfg: ExperimentConfig) -> tuple[Suite, dict]:
    """The suite and its merged parameters; raises ConfigError naming the violated constraint."""
    if cfg.experiment not in REGISTRY:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; registered: {', '.join(sorted(REGISTRY))}")
    suite = REGISTRY[cfg.experiment]
    cfg.validate_types()
    if len(cfg.grid.bbox) not in suite.dims:
        raise ConfigError(f"{suite.name} runs in dimension {suite.dims}, grid has {len(cfg.grid.bbox)}")
    if suite.unit_ball and not _is_unit_ball(cfg.grid):
        raise ConfigError(f"{suite.name} needs the unit-ball domain: bbox [-1, 1]^n and mask {_unit_ball_mask(2)!r}")
    params = dict(suite.defaults)
    for k, v in cfg.params.items():
        if k not in params:
            raise ConfigError(f"{suite.name}: unknown parameter {k!r}; known: {', '.join(sorted(params))}")
        d = params[k]
        if isinstance(d, bool) != isinstance(v, bool) or (
            isinstance(d, (int, float)) and not isinstance(v, (int, float))
        ) or (isinstance(d, list) and not isinstance(v, list)) or (isinstance(d, str) and not isinstance(v, str)):
            raise ConfigError(f"{suite.name}: parameter {k!r} should look like {d!r}, got {v!r}")
        if isinstance(d, int) and not isinstance(d, bool) and not isinstance(v, int):
            raise ConfigError(f"{suite.name}: parameter {k!r} must be an integer, got {v!r}")
        params[k] = float(v) if isinstance(d, float) and isinstance(v, int) else v
    return suite, params


def _write_csv(rows: list[dict], path: Path):
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in to_plain(r).items()})
    path.write_text(buf.getvalue())


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run one suite and write its reports; ConfigError propagates for invalid input."""
    suite, params = resolve_params(cfg)
    ctx = SuiteContext(cfg, params)
    try:
        suite.run(ctx)
    except ConfigError:
        raise
    except ValueError as exc:
        # parameters rejected by a module's own validation
        raise ConfigError(f"{suite.name}: {exc}") from exc
    out = Path(cfg.out)
    if out.exists():
        for old in list(out.glob("*.csv")) + list(out.glob("*.fld")):
            old.unlink()
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, rows in ctx.tables.items():
        _write_csv(rows, out / f"{name}.csv")
        files.append(f"{name}.csv")
    for name, text in ctx.texts.items():
        (out / name).write_text(text)
        files.append(name)
    for name, f in ctx.fields.items():
        write_field(f, out / f"{name}.fld")
        files.append(f"{name}.fld")
    cfg.save(out / "config.toml")
    passed = all(c.passed for c in ctx.checks)
    summary = {
        "experiment": suite.name,
        "criteria": list(suite.criteria),
        "seed": cfg.seed,
        "config": cfg.to_dict() | {"out": None},
        "params": params,
        "checks": [c.to_dict() for c in ctx.checks],
        "metrics": ctx.metrics,
        "files": sorted(files),
        "passed": passed,
    }
    (out / "summary.json").write_text(json.dumps(to_plain(summary), sort_keys=True, indent=2) + "\n")
    return RunResult(0 if passed else 1, out, ctx.checks)


def list_experiments() -> str:
    lines = []
    for name in sorted(REGISTRY):
        s = REGISTRY[name]
        crit = ",".join(s.criteria) or "-"
        lines.append(f"{name:24s} [criteria {crit}] {s.description}")
        lines.append(f"{'':24s} params: " + ", ".join(f"{k}={v!r}" for k, v in sorted(s.defaults.items())))
    return "\n".join(lines)

"""Hölder quasicontinuous representatives of Riesz potentials.

Pipeline: truncate the density at the level s_r, take potentials along a
radius schedule, clamp the successive increments, and collect the cells
where a clamp was active into an exceptional set whose capacity is
estimated by the convex solver.  Off that set the representative equals
the potential exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .capacity import CapacityOptions, CapacityResult, CompactSetSpec, riesz_morrey_capacity
from .field import BallFamily, ScalarField, ball_family, write_field
from .morrey import MorreyIndex, SeminormReport, holder_seminorm, morrey_norm
from .riesz import RieszKernelSpec, mollified_average, oscillation_field, riesz_potential


@dataclass(frozen=True)
class TruncationParams:
    """Exponents of the truncation scheme: density in L^{p,lam}, target index (q, mu)."""

    n: int
    alpha: float
    p: float
    lam: float
    q: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not 1 < self.q < self.p:
            raise ValueError(f"need 1 < q < p, got q={self.q}, p={self.p}")
        if not 0 < self.lam <= self.n:
            raise ValueError(f"lambda must lie in (0, n], got {self.lam}")
        if not 0 < self.alpha < self.n:
            raise ValueError(f"alpha must lie in (0, n), got {self.alpha}")
        if not 0 < self.gamma < self.beta:
            raise ValueError(f"need 0 < gamma < beta, got gamma={self.gamma}, beta={self.beta}")
        if not self.beta < self.beta_max:
            raise ValueError(f"beta={self.beta} must be below {self.beta_max:.6g}")

    @property
    def mu(self) -> float:
        return self.n - (self.n - self.lam) * self.q / self.p

    @property
    def beta_max(self) -> float:
        a, p, q, lam = self.alpha, self.p, self.q, self.lam
        return admissible_beta_max(a, p, q, lam)

    @property
    def source(self) -> MorreyIndex:
        return MorreyIndex(self.p, self.lam)

    @property
    def target(self) -> MorreyIndex:
        return MorreyIndex(self.q, self.mu)

    def threshold(self, r: float) -> float:
        """s_r = r^(beta q / (q - p)); grows as r shrinks."""
        return float(r ** (self.beta * self.q / (self.q - self.p)))


def admissible_beta_max(alpha: float, p: float, q: float, lam: float) -> float:
    """Supremum of the admissible truncation exponents beta."""
    t = 1 - q / p
    return min(1.0, alpha * t, lam * t / (lam + (1 - alpha) * q))


def truncate(f: ScalarField, r: float, params: TruncationParams):
    """(f * 1{|f| <= s_r}, s_r, {|f| > s_r})."""
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    s = params.threshold(r)
    over = (np.abs(f.values) > s) & f.grid.mask
    return f.with_values(np.where(over, 0.0, f.values)), s, over


def truncation_errors(
    f: ScalarField, radii: Sequence[float], params: TruncationParams, family: BallFamily
) -> list[tuple[float, float]]:
    """(r, ||f - f_r|| in L^{q,mu}) along ``radii``."""
    out = []
    for r in radii:
        fr, _, _ = truncate(f, r, params)
        out.append((float(r), morrey_norm(f - fr, params.target, family).value))
    return out


def loglog_slope(xs, ys) -> float:
    x, y = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(x, y, 1)[0])


def lip_delta_check(
    f: ScalarField, alpha: float, idx: MorreyIndex, pairs: int = 4000, seed: int = 0
) -> SeminormReport:
    """Hölder-delta seminorm of I_alpha f with delta = alpha - lam/p."""
    delta = alpha - idx.lam / idx.p
    if not 0 < delta < 1:
        raise ValueError(f"delta = alpha - lam/p = {delta:g} must lie in (0, 1)")
    g = riesz_potential(f, RieszKernelSpec(alpha))
    rep = holder_seminorm(g, delta, pairs=pairs, seed=seed)
    rep.extra["delta"] = delta
    return rep


@dataclass(frozen=True)
class TruncationSchedule:
    gamma: float
    radii: tuple

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if len(r) < 3:
            raise ValueError("schedule needs J >= 2")
        if r[0] != 1.0:
            raise ValueError("schedule must start at r_0 = 1")
        if np.any(self.ratios ** self.gamma > 0.5 * (1 + 1e-12)):
            raise ValueError("schedule violates (r_{j+1}/r_j)^gamma <= 1/2")

    @property
    def J(self) -> int:
        return len(self.radii) - 1

    @property
    def ratios(self) -> np.ndarray:
        r = np.asarray(self.radii, dtype=float)
        return r[1:] / r[:-1]

    @property
    def certificate(self) -> float:
        """max_j (r_{j+1}/r_j)^gamma, at most 1/2."""
        return float(np.max(self.ratios**self.gamma))


def make_schedule(gamma: float, J: int) -> TruncationSchedule:
    """r_j = 2^(-j/gamma), j = 0..J."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if J < 2:
        raise ValueError("J must be at least 2")
    return TruncationSchedule(gamma, tuple(2.0 ** (-j / gamma) for j in range(J + 1)))


def clamp_increment(h_next: ScalarField, h_cur: ScalarField, r_j: float, gamma: float) -> ScalarField:
    """Pointwise clamp of h_next - h_cur to [-r_j^gamma, r_j^gamma]."""
    if h_next.grid is not h_cur.grid:
        raise ValueError("fields live on different grids")
    t = r_j**gamma
    return h_cur.with_values(np.clip(h_next.values - h_cur.values, -t, t))


@dataclass
class QuasicontinuityReport:
    representative: ScalarField = field(repr=False)
    exceptional: np.ndarray = field(repr=False)
    capacity: CapacityResult | None
    holder: SeminormReport
    agreement: np.ndarray = field(repr=False)
    J: int
    level_capacities: list
    schedule: list
    eps: float
    flags: list = field(default_factory=list)

    @property
    def capacity_value(self) -> float:
        return 0.0 if self.capacity is None else self.capacity.value

    @property
    def capacity_upper(self) -> float:
        """Objective of a feasible density for O: a certified upper bound on its capacity."""
        return 0.0 if self.capacity is None else self.capacity.value

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "eps": self.eps,
            "exceptional_cells": int(self.exceptional.sum()),
            "capacity": None if self.capacity is None else self.capacity.to_dict(),
            "holder": self.holder.to_dict(),
            "level_capacities": self.level_capacities,
            "schedule": self.schedule,
            "agreement_off_O": bool(np.all(self.agreement[~self.exceptional & self.representative.grid.mask])),
            "flags": self.flags,
        }

    def save(self, directory, stem: str = "representative") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        js = directory / f"{stem}.json"
        js.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))
        grid = self.representative.grid
        return [
            js,
            write_field(self.representative, directory / f"{stem}.fld"),
            write_field(ScalarField(grid, self.exceptional.astype(float)), directory / f"{stem}-O.fld"),
        ]


def build_representative(
    f: ScalarField,
    params: TruncationParams,
    schedule: TruncationSchedule,
    eps: float,
    family: BallFamily | None = None,
    cap_opts: CapacityOptions | None = None,
    max_levels: int = 64,
    holder_pairs: int = 4000,
    seed: int = 0,
) -> QuasicontinuityReport:
    """Hölder-gamma representative of g = I_alpha f, equal to g off an open set of small capacity.

    The schedule is extended (same gamma) until truncation no longer
    changes f, so the potentials h_j reach g.  With d_j = h_{j+1} - h_j
    and w_j its clamp, O_j = {|d_j| > r_j^gamma}; J is the smallest index
    whose tail of level capacities stays below ``eps``, O is the union of
    the O_j for j >= J and h = g - sum_{j >= J} (d_j - w_j), which is
    h_J + sum w_j and coincides with g bit-for-bit off O.
    """
    grid = f.grid
    if params.n != grid.n:
        raise ValueError("params.n does not match the grid dimension")
    spec = RieszKernelSpec(params.alpha)
    family = family or ball_family(grid, max(1, grid.shape[0] // 16), 10)
    flags = []

    radii = list(schedule.radii)
    fmax = f.max_abs()
    while params.threshold(radii[-1]) < fmax:
        if len(radii) > max_levels:
            flags.append("schedule-budget")
            break
        radii.append(2.0 ** (-len(radii) / schedule.gamma))

    g = riesz_potential(f, spec)
    hs = []
    for r in radii:
        if r == 1.0:
            fr = f.with_values(np.where(np.abs(f.values) > params.threshold(1.0), 0.0, f.values))
        else:
            fr, _, over = truncate(f, r, params)
            if not over.any():
                hs.append(g)
                continue
        hs.append(riesz_potential(fr, spec))
    if hs[-1] is not g:
        hs.append(g)
        radii.append(radii[-1] * 2.0 ** (-1 / schedule.gamma))

    levels = []
    for j in range(len(hs) - 1):
        d = hs[j + 1].values - hs[j].values
        w = clamp_increment(hs[j + 1], hs[j], radii[j], schedule.gamma).values
        O_j = (np.abs(d) > radii[j] ** schedule.gamma) & grid.mask
        levels.append((d, w, O_j))

    cap_opts = cap_opts or CapacityOptions()
    target = params.target

    def cap_of(cells):
        if not cells.any():
            return None
        return riesz_morrey_capacity(CompactSetSpec.bitmap(cells, "O"), params.alpha, target, family, cap_opts)

    # tail sums from the last level backwards; stop once the budget is spent
    caps = [0.0] * len(levels)
    J, tail = len(levels), 0.0
    for j in range(len(levels) - 1, -1, -1):
        res = cap_of(levels[j][2])
        caps[j] = 0.0 if res is None else res.value
        if tail + caps[j] >= eps:
            break
        tail += caps[j]
        J = j

    O = np.zeros(grid.shape, dtype=bool)
    corr = np.zeros(grid.shape)
    for d, w, O_j in levels[J:]:
        O |= O_j
        corr += d - w
    h = g.with_values(g.values - corr)
    cap = cap_of(O)
    if cap is not None:
        if cap.value >= eps:
            flags.append("capacity-above-eps")
        if cap.value > sum(caps[J:]) * (1 + 0.02) + 1e-12:
            flags.append("subadditivity")
    agree = (h.values == g.values) & grid.mask
    hol = holder_seminorm(h, schedule.gamma, pairs=holder_pairs, seed=seed)
    return QuasicontinuityReport(
        representative=h,
        exceptional=O,
        capacity=cap,
        holder=hol,
        agreement=agree,
        J=J,
        level_capacities=[float(c) for c in caps],
        schedule=[float(r) for r in radii],
        eps=float(eps),
        flags=flags,
    )


# --------------------------------------------------------------------------
# Lebesgue-point diagnostics


@dataclass
class LebesgueScan:
    flagged: np.ndarray = field(repr=False)
    measure: float
    capacity: CapacityResult | None
    oscillation_max: list


def lebesgue_scan(
    g: ScalarField,
    delta_ladder: Sequence[float],
    omega_threshold,
    ladder_size: int = 3,
    index: MorreyIndex | None = None,
    alpha: float | None = None,
    family: BallFamily | None = None,
    cap_opts: CapacityOptions | None = None,
) -> LebesgueScan:
    """Cells whose ball-mean oscillation stays above the threshold at every rung of the delta ladder.

    ``omega_threshold`` is a number or one value per rung.  With ``index``
    and ``alpha`` the flagged set's capacity is estimated as well.
    """
    deltas = np.asarray(delta_ladder, dtype=float)
    if np.any(np.diff(deltas) >= 0):
        raise ValueError("delta_ladder must be decreasing")
    omegas = np.broadcast_to(np.asarray(omega_threshold, dtype=float), deltas.shape)
    if np.any(omegas <= 0):
        raise ValueError("omega_threshold must be positive")
    grid = g.grid
    flagged = grid.mask.copy()
    maxima = []
    for d, w in zip(deltas, omegas):
        osc = oscillation_field(g, float(d), ladder_size).values
        flagged &= osc > w
        maxima.append(float(osc[grid.mask].max()))
    cap = None
    if flagged.any() and index is not None and alpha is not None:
        family = family or ball_family(grid, max(1, grid.shape[0] // 16), 10)
        cap = riesz_morrey_capacity(CompactSetSpec.bitmap(flagged, "flagged"), alpha, index, family, cap_opts)
    return LebesgueScan(flagged, float(flagged.sum() * grid.cell_volume), cap, maxima)


def uniformity_profile(g: ScalarField, h: ScalarField, exceptional: np.ndarray, radii: Sequence[float]) -> list[float]:
    """max over cells off O of |mean of g over B(x, r) within the domain - h(x)| for each r.

    The mean is taken over B(x, r) intersected with the domain; the full-ball
    mean of the zero-extended g would see the boundary as a jump.
    """
    grid = g.grid
    keep = grid.mask & ~exceptional
    inside = ScalarField(grid, grid.mask.astype(float))
    out = []
    for r in radii:
        m = mollified_average(g, float(r)).values / np.maximum(mollified_average(inside, float(r)).values, 1e-300)
        out.append(float(np.max(np.abs(m - h.values)[keep])) if keep.any() else 0.0)
    return out

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morreykit.field import Ball, ScalarField, ball_family, make_grid, sample
from morreykit.riesz import (
    MollifierSpec,
    RieszKernelSpec,
    box_kernel_integral,
    maximal_function,
    mollified_average,
    oscillation,
    oscillation_field,
    oscillation_ladder,
    potential_at,
    riesz_composition_constant,
    riesz_potential,
    self_cell_mean,
)


def test_zero_field(disk32):
    assert riesz_potential(ScalarField(disk32, np.zeros(disk32.shape)), 1.0).max_abs() == 0


def test_unit_disk_indicator_at_origin():
    g = make_grid([(-1, 1)] * 2, 128, Ball((0, 0), 1.0))
    one = ScalarField(g, g.mask.astype(float))
    assert potential_at(one, 1.0, [[0.0, 0.0]])[0] == pytest.approx(2 * math.pi, rel=0.02)


def test_self_cell_mean_closed_form():
    # int over [-a, a]^2 of 1/|y| = 8 a log(1 + sqrt 2)
    a = 0.05
    assert self_cell_mean((2 * a, 2 * a), 1.0) == pytest.approx(8 * a * math.log(1 + math.sqrt(2)) / (4 * a * a), rel=1e-10)
    # alpha = n: the kernel is 1 and the integral is the volume
    assert box_kernel_integral([-0.1, -0.2], [0.3, 0.1], 2.0) == pytest.approx(0.4 * 0.3, rel=1e-10)


def test_self_cell_mean_3d_against_quadrature():
    # int over [-1/2, 1/2]^3 of |y|^(-1.5), by spherical shells of the cube
    from scipy import integrate

    val = self_cell_mean((1.0, 1.0, 1.0), 1.5)
    ref = 8 * integrate.tplquad(lambda z, y, x: (x * x + y * y + z * z) ** -0.75, 0, 0.5, 0, 0.5, 0, 0.5)[0]
    assert val == pytest.approx(ref, rel=1e-5)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7])
def test_fast_matches_direct(disk32, alpha):
    f = ScalarField(disk32, np.random.default_rng(0).normal(size=disk32.shape))
    a = riesz_potential(f, alpha, "fast").values
    b = riesz_potential(f, alpha, "direct").values
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


def test_fast_matches_direct_3d():
    g = make_grid([(-1, 1)] * 3, 10, Ball((0, 0, 0), 1.0))
    f = ScalarField(g, np.random.default_rng(1).normal(size=g.shape))
    a = riesz_potential(f, 1.2, "fast").values
    b = riesz_potential(f, 1.2, "direct").values
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


def test_ball_mean_rule_matches_direct(disk32):
    spec = RieszKernelSpec(1.0, rho=2 * disk32.h, rule="ball-mean")
    f = ScalarField(disk32, np.random.default_rng(2).normal(size=disk32.shape))
    a = riesz_potential(f, spec, "fast").values
    b = riesz_potential(f, spec, "direct").values
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_linearity(a, b, seed):
    g = make_grid([(-1, 1)] * 2, 16, Ball((0, 0), 1.0))
    rng = np.random.default_rng(seed)
    f, h = (ScalarField(g, rng.normal(size=g.shape)) for _ in range(2))
    lhs = riesz_potential(a * f + b * h, 0.8).values
    rhs = a * riesz_potential(f, 0.8).values + b * riesz_potential(h, 0.8).values
    scale = (abs(a) + abs(b)) * max(riesz_potential(f.abs(), 0.8).max_abs(), riesz_potential(h.abs(), 0.8).max_abs())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(scale, 1e-300)


@given(st.integers(0, 2**31), st.floats(0.1, 1.9))
def test_positivity(seed, alpha):
    g = make_grid([(-1, 1)] * 2, 16, Ball((0, 0), 1.0))
    f = ScalarField(g, np.abs(np.random.default_rng(seed).normal(size=g.shape)))
    assert riesz_potential(f, alpha).masked.min() >= 0
    fam = ball_family(g, 1, 4)
    assert maximal_function(f, fam).masked.min() >= 0


def test_rejections(disk32):
    f = ScalarField(disk32, np.ones(disk32.shape))
    with pytest.raises(ValueError):
        riesz_potential(f, 2.0)
    with pytest.raises(ValueError):
        riesz_potential(f, -0.5)
    with pytest.raises(OverflowError):
        riesz_potential(f * 1e151, 1.0)
    with pytest.raises(ValueError):
        RieszKernelSpec(1.0, rho=1e-4).validate(disk32)
    with pytest.raises(ValueError):
        riesz_potential(f, 1.0, method="slow")


def test_refinement_order_for_smooth_field():
    bump = lambda x: np.clip(1 - np.sum(x**2, -1) / 0.5**2, 0, None) ** 3
    probes = [[0.0, 0.0], [0.3, 0.1]]
    vals = []
    for N in (16, 32, 64, 256):
        g = make_grid([(-1, 1)] * 2, N, Ball((0, 0), 1.0))
        vals.append(potential_at(sample(bump, g), 1.0, probes))
    ref = vals[-1]
    errs = [np.max(np.abs(v - ref)) for v in vals[:-1]]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0)


def test_semigroup_with_composition_constant():
    # I_a I_b = c(a, b, n) I_{a+b}; truncation at the boundary is kept small by
    # small orders, a compact bump and probes far inside a large box
    g = make_grid([(-8, 8)] * 2, 128)
    f = sample(lambda x: np.clip(1 - np.sum(x**2, -1), 0, None) ** 2, g)
    a, b = 0.3, 0.5
    lhs = riesz_potential(riesz_potential(f, b), a)
    rhs = riesz_potential(f, a + b) * riesz_composition_constant(a, b, 2)
    for p in [(0, 0), (0.5, 0), (0, -1.0)]:
        i = g.nearest_masked(p)
        assert lhs.values[i] / rhs.values[i] == pytest.approx(1.0, abs=0.05)


def test_composition_constant_known_case():
    # n = 3, a = b = 1: int |x-y|^-2 |y|^-2 dy = pi^3 / |x|
    assert riesz_composition_constant(1.0, 1.0, 3) == pytest.approx(math.pi**3, rel=1e-12)
    with pytest.raises(ValueError):
        riesz_composition_constant(1.0, 1.5, 2)


def test_mollifier_mass(disk64):
    m = MollifierSpec.on(disk64, 0.2)
    assert m.mass == pytest.approx(1.0, rel=1e-12)
    assert m.normalization == pytest.approx(m.continuum_normalization, rel=0.05)
    with pytest.raises(ValueError):
        MollifierSpec.on(disk64, disk64.h)


def test_mollified_average_constant_and_linear():
    g = make_grid([(-1, 1)] * 2, 64)
    c = mollified_average(sample(lambda x: np.full(len(x), 3.0), g), 0.2)
    inner = g.mask & (np.max(np.abs(g.centers), axis=-1) < 0.7)
    np.testing.assert_allclose(c.values[inner], 3.0, rtol=1e-12)
    lin = sample(lambda x: 2 * x[:, 0] - x[:, 1], g)
    m = mollified_average(lin, 0.2)
    np.testing.assert_allclose(m.values[inner], lin.values[inner], atol=1e-10)


def test_mollified_half_plane_at_interface():
    g = make_grid([(-1, 1)] * 2, 64)
    f = sample(lambda x: (x[:, 0] > 0).astype(float), g)
    r = 0.25
    v = mollified_average(f, r).values[g.index_of((0.01, 0.0))]
    assert v == pytest.approx(0.5, abs=2 * g.h / r)


def test_oscillation_constant_and_monotone(disk64):
    c = sample(lambda x: np.full(len(x), 2.0), disk64)
    assert oscillation(c, (0.1, 0.1), 0.3) == pytest.approx(0.0, abs=1e-12)
    f = sample(lambda x: np.sin(5 * x[:, 0]) + x[:, 1] ** 2, disk64)
    vals = [oscillation(f, (0.1, -0.2), d) for d in (0.15, 0.3, 0.6)]
    assert vals == sorted(vals)
    assert np.all(oscillation_field(f, 0.3).masked >= 0)
    with pytest.raises(ValueError):
        oscillation(f, (0.99, 0.99), 0.3)


def test_oscillation_across_a_jump_saturates_at_half():
    # a point 5h from a unit jump: the smallest balls see only the value 1, the
    # largest straddle the jump with mean near 1/2, so the oscillation tends to
    # half the jump height (not the full height) once delta spans the jump
    g = make_grid([(-4, 4)] * 2, 256)
    f = sample(lambda x: (x[:, 0] > 0).astype(float), g)
    x = (5 * g.h, 0.0)
    assert oscillation(f, x, 4 * g.h, ladder_size=3) == pytest.approx(0.0, abs=1e-12)
    assert oscillation(f, x, 3.5, ladder_size=3) == pytest.approx(0.5, rel=0.1)


def test_ladder_nested_and_ratio(disk64):
    a, b = oscillation_ladder(disk64, 0.3), oscillation_ladder(disk64, 0.6)
    np.testing.assert_allclose(b[: len(a)], a)
    assert np.all(a[1:] / a[:-1] <= math.sqrt(2) + 1e-12)
    with pytest.raises(ValueError):
        oscillation_ladder(disk64, 2 * disk64.h)


def test_maximal_function(disk32):
    fam = ball_family(disk32, 1, 6)
    c = ScalarField(disk32, -2.0 * np.ones(disk32.shape))
    inner = disk32.mask & (np.linalg.norm(disk32.centers, axis=-1) < 0.3)
    assert np.all(maximal_function(c, fam).values[inner] >= 2.0 - 1e-12)
    f = ScalarField(disk32, np.random.default_rng(5).normal(size=disk32.shape))
    assert np.all(maximal_function(f, fam).values >= np.abs(f.values) - 1e-15)
    with pytest.raises(ValueError, match="dense"):
        maximal_function(f, ball_family(disk32, 4, 6))


def test_maximal_function_of_indicator_brute_force():
    g = make_grid([(-1, 1)] * 2, 48)
    R = 0.2
    f = sample(lambda x: (np.linalg.norm(x, axis=-1) < R).astype(float), g)
    fam = ball_family(g, 1, 8)
    M = maximal_function(f, fam)
    i = g.nearest_masked((2 * R, 0.0))
    x = g.centers[i]
    c = g.centers[g.mask]
    brute = abs(f.values[i])
    for r in fam.radii:
        inside = np.linalg.norm(c - x, axis=-1) < r
        brute = max(brute, f.masked[inside].sum() / inside.sum())
    assert M.values[i] == pytest.approx(brute, rel=1e-12)

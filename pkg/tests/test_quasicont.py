import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import radial
from morreykit.capacity import CapacityOptions
from morreykit.field import Ball, ScalarField, ball_family, make_grid, sample
from morreykit.morrey import MorreyIndex
from morreykit.quasicont import (
    TruncationParams,
    TruncationSchedule,
    admissible_beta_max,
    build_representative,
    clamp_increment,
    lebesgue_scan,
    lip_delta_check,
    loglog_slope,
    make_schedule,
    truncate,
    truncation_errors,
    uniformity_profile,
)
from morreykit.riesz import riesz_potential


def _disk(N):
    return make_grid([(-1, 1)] * 2, N, Ball((0, 0), 1.0))


def _params(beta=0.1, gamma=0.05, lam=1.6, alpha=0.5):
    return TruncationParams(n=2, alpha=alpha, p=2.0, lam=lam, q=1.5, beta=beta, gamma=gamma)


CHEAP = CapacityOptions(iterations=40, dual_iterations=40)


def test_params_derived_index():
    prm = _params()
    assert prm.mu == pytest.approx(2 - 0.4 * 0.75)
    assert prm.target == MorreyIndex(1.5, prm.mu)
    assert prm.beta_max == pytest.approx(min(1, 0.5 * 0.25, 1.6 * 0.25 / (1.6 + 0.5 * 1.5)))


@pytest.mark.parametrize(
    "kw",
    [dict(beta=0.2), dict(gamma=0.1), dict(gamma=0.0), dict(lam=2.5), dict(alpha=2.0)],
)
def test_params_rejected(kw):
    with pytest.raises(ValueError):
        _params(**kw)


def test_params_need_q_below_p():
    with pytest.raises(ValueError):
        TruncationParams(n=2, alpha=0.5, p=2.0, lam=1.6, q=2.5, beta=0.1, gamma=0.05)


@given(st.floats(0.1, 0.99), st.floats(1.05, 3.0), st.floats(0.1, 2.0))
def test_beta_max_in_unit_interval(alpha, p, lam):
    q = 1 + (p - 1) / 2
    b = admissible_beta_max(alpha, p, q, lam)
    assert 0 < b <= 1


def test_no_admissible_beta_when_alpha_large():
    # lam + (1 - alpha) q < 0 makes the third bound negative
    assert admissible_beta_max(1.9, 2.0, 1.5, 0.1) < 0
    with pytest.raises(ValueError):
        TruncationParams(n=2, alpha=1.9, p=2.0, lam=0.1, q=1.5, beta=0.01, gamma=0.005)


def test_threshold_value():
    assert _params().threshold(0.5) == pytest.approx(0.5 ** (-0.3), rel=1e-12)
    assert _params().threshold(0.5) == pytest.approx(1.2311, abs=1e-4)


def test_truncate_inert_below_threshold(disk32):
    f = sample(lambda x: np.cos(x[:, 0]), disk32)
    fr, s, over = truncate(f, 0.5, _params())
    assert f.max_abs() <= s
    assert not over.any()
    np.testing.assert_array_equal(fr.values, f.values)


@given(st.floats(0.01, 0.99))
def test_truncate_definition(r):
    g = _disk(32)
    f = sample(lambda x: radial(x, -0.8), g)
    fr, s, over = truncate(f, r, _params())
    keep = np.abs(f.values) <= s
    np.testing.assert_array_equal(fr.values, np.where(keep, f.values, 0.0))
    np.testing.assert_array_equal(over, ~keep & g.mask)


def test_truncate_rejects_r_outside_unit_interval(disk32):
    f = sample(lambda x: x[:, 0], disk32)
    with pytest.raises(ValueError):
        truncate(f, 1.0, _params())


def test_truncation_error_slope():
    prm = TruncationParams(n=2, alpha=0.5, p=2.0, lam=1.0, q=1.5, beta=0.1125, gamma=0.05)
    g = _disk(64)
    f = sample(lambda x: radial(x, -0.5), g)
    fam = ball_family(g, 4, 12, anchors=[np.zeros(2)])
    errs = truncation_errors(f, [2.0**-k for k in range(1, 6)], prm, fam)
    r, e = zip(*errs)
    assert loglog_slope(r, e) >= 0.8 * prm.beta


def test_lip_delta_rejects_delta_above_one(disk32):
    f = sample(lambda x: np.ones(len(x)), disk32)
    with pytest.raises(ValueError):
        lip_delta_check(f, 1.6, MorreyIndex(2, 1.0))


def test_lip_delta_zero_field(disk32):
    f = sample(lambda x: np.zeros(len(x)), disk32)
    assert lip_delta_check(f, 1.2, MorreyIndex(2, 1.0)).value == 0.0


def test_lip_delta_stable_under_refinement():
    vals = []
    for N in (64, 128):
        g = _disk(N)
        f = sample(lambda x: (np.linalg.norm(x - 0.2, axis=-1) < 0.3).astype(float) - 0.5 * (x[:, 1] > 0.1), g)
        rep = lip_delta_check(f, 1.2, MorreyIndex(2, 1.0))
        assert rep.extra["delta"] == pytest.approx(0.7)
        vals.append(rep.value)
    assert vals[1] == pytest.approx(vals[0], rel=0.15)


def test_schedule_equality_case():
    s = make_schedule(0.5, 4)
    np.testing.assert_allclose(s.radii, [4.0**-j for j in range(5)], rtol=1e-15)
    assert s.certificate == pytest.approx(0.5, rel=1e-12)


@given(st.floats(0.01, 0.99), st.integers(2, 12))
def test_schedule_properties(gamma, J):
    s = make_schedule(gamma, J)
    assert s.radii[0] == 1.0 and s.J == J
    assert np.all(np.diff(s.radii) < 0)
    assert s.certificate <= 0.5 * (1 + 1e-12)


def test_schedule_rejections():
    with pytest.raises(ValueError):
        make_schedule(0.5, 1)
    with pytest.raises(ValueError):
        make_schedule(1.0, 3)
    with pytest.raises(ValueError):
        TruncationSchedule(0.5, (1.0, 0.5, 0.25))  # ratio^gamma = 0.707
    with pytest.raises(ValueError):
        TruncationSchedule(0.5, (0.9, 0.2, 0.04))


def test_clamp_cases(disk32):
    z = sample(lambda x: np.zeros(len(x)), disk32)
    ten = sample(lambda x: np.full(len(x), 10.0), disk32)
    small = sample(lambda x: 0.1 * np.sin(x[:, 0]), disk32)
    assert np.all(clamp_increment(ten, z, 0.0625, 0.5).values[disk32.mask] == 0.25)
    np.testing.assert_array_equal(clamp_increment(small, z, 1.0, 0.5).values, small.values)


@given(st.integers(0, 2**31 - 1), st.floats(1e-4, 1.0), st.floats(0.01, 0.99))
def test_clamp_bound(seed, r, gamma):
    g = _disk(16)
    rng = np.random.default_rng(seed)
    a = sample(lambda x: rng.normal(size=len(x)) * 5, g)
    b = sample(lambda x: rng.normal(size=len(x)), g)
    w = clamp_increment(a, b, r, gamma).values
    assert np.max(np.abs(w)) <= r**gamma


def test_clamp_needs_shared_grid(disk32, square32):
    with pytest.raises(ValueError):
        clamp_increment(sample(lambda x: x[:, 0], disk32), sample(lambda x: x[:, 0], square32), 0.5, 0.5)


def test_representative_of_bounded_field_is_the_potential(disk32):
    f = sample(lambda x: np.exp(-np.sum(x**2, axis=-1)), disk32)
    rep = build_representative(f, _params(), make_schedule(0.05, 2), 0.1, cap_opts=CHEAP)
    g = riesz_potential(f, 0.5)
    assert not rep.exceptional.any()
    assert rep.capacity is None and rep.capacity_value == 0.0
    np.testing.assert_array_equal(rep.representative.values, g.values)


def test_representative_of_singular_field(tmp_path):
    g = _disk(32)
    f = sample(lambda x: radial(x, -0.8), g)
    prm = _params(beta=0.9 * _params().beta_max, gamma=0.1)
    rep = build_representative(f, prm, make_schedule(0.1, 2), 0.1, cap_opts=CHEAP)
    G = riesz_potential(f, 0.5)
    off = g.mask & ~rep.exceptional
    np.testing.assert_array_equal(rep.representative.values[off], G.values[off])
    assert rep.exceptional[g.nearest_masked((0.0, 0.0))]
    assert rep.capacity_upper < 0.1 or "capacity-above-eps" in rep.flags
    assert "subadditivity" not in rep.flags
    assert rep.schedule[0] == 1.0
    # the representative only differs from g by clamp corrections
    assert np.all(np.isfinite(rep.representative.values))
    paths = rep.save(tmp_path)
    d = json.loads(paths[0].read_text())
    assert d["agreement_off_O"] is True and d["J"] == rep.J


def test_representative_dimension_mismatch(disk32):
    f = sample(lambda x: x[:, 0], disk32)
    prm = TruncationParams(n=3, alpha=0.5, p=2.0, lam=1.6, q=1.5, beta=0.1, gamma=0.05)
    with pytest.raises(ValueError):
        build_representative(f, prm, make_schedule(0.05, 2), 0.1)


def test_lebesgue_scan_smooth_is_empty():
    # compactly supported, so the zero extension is smooth too
    f = sample(lambda x: np.exp(-8 * np.sum(x**2, axis=-1)) * (1 - np.sum(x**2, axis=-1)) ** 2, _disk(128))
    scan = lebesgue_scan(f, [0.3, 0.2, 0.1], 0.2)
    assert not scan.flagged.any() and scan.measure == 0.0 and scan.capacity is None


def test_lebesgue_scan_flags_only_near_jump():
    # the zero extension of the half indicator jumps on {x1 = 0} and on the boundary where x1 > 0
    g = make_grid([(-1, 1)] * 2, 128)
    f = sample(lambda x: (x[:, 0] > 0).astype(float), g)
    deltas = [0.3, 0.2, 0.1]
    scan = lebesgue_scan(f, deltas, 0.2)
    assert scan.flagged.any()
    x1 = g.centers[..., 0]
    near = (np.abs(x1) <= min(deltas)) | ((g.boundary_distance() <= min(deltas)) & (x1 > -min(deltas)))
    assert not np.any(scan.flagged & ~near)
    assert np.any(scan.flagged & (np.abs(x1) < g.h))


def test_lebesgue_scan_measure_shrinks_along_the_ladder():
    g = riesz_potential(sample(lambda x: radial(x, -0.8), _disk(128)), 0.5)
    ladder = [0.4, 0.2, 0.1, 0.07]
    measures = [lebesgue_scan(g, ladder[:k], 0.05).measure for k in range(1, 5)]
    assert all(b <= a for a, b in zip(measures, measures[1:]))
    assert measures[-1] < measures[0]


def test_lebesgue_scan_rejections(disk64):
    f = sample(lambda x: x[:, 0], disk64)
    with pytest.raises(ValueError):
        lebesgue_scan(f, [0.3, 0.4], 0.1)
    with pytest.raises(ValueError):
        lebesgue_scan(f, [0.4, 0.3], 0.0)
    with pytest.raises(ValueError):
        lebesgue_scan(f, [0.1], 0.1)  # below 4h


def test_lebesgue_scan_capacity_of_flagged(disk64):
    f = sample(lambda x: (x[:, 0] > 0).astype(float), disk64)
    scan = lebesgue_scan(f, [0.4, 0.3], 0.2, index=MorreyIndex(1.5, 1.5), alpha=1.0, cap_opts=CHEAP)
    assert scan.capacity is not None and scan.capacity.value > 0


def test_uniformity_profile_decreases(disk64):
    g = sample(lambda x: np.sin(2 * x[:, 0]) + x[:, 1] ** 2 + 3, disk64)
    prof = uniformity_profile(g, g, np.zeros(disk64.shape, bool), [0.4, 0.2, 0.1, 0.07])
    assert all(b < a for a, b in zip(prof, prof[1:]))


def test_uniformity_profile_off_exceptional_set():
    g = _disk(64)
    f = sample(lambda x: radial(x, -0.8), g)
    prm = _params(beta=0.9 * _params().beta_max, gamma=0.1)
    rep = build_representative(f, prm, make_schedule(0.1, 2), 0.1, cap_opts=CHEAP)
    G = riesz_potential(f, 0.5)
    prof = uniformity_profile(G, rep.representative, rep.exceptional, [0.4, 0.2, 0.1, 0.07])
    assert prof[-1] < prof[0]
    assert isinstance(rep.representative, ScalarField)

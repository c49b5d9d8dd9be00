import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from morreykit.field import (
    Annulus,
    Ball,
    BallSumBank,
    Bitmap,
    Box,
    EmptyRegionWarning,
    ScalarField,
    Union,
    ball_family,
    ball_stencil,
    ball_sums,
    family_integrals,
    integrate,
    make_grid,
    read_field,
    sample,
    shape_from_id,
    write_field,
    write_pgm,
)


def test_unit_square_counts():
    g = make_grid([(0, 1)] * 2, 64)
    assert g.mask.sum() == 4096
    assert g.cell_volume == pytest.approx(1 / 64**2)


def test_disk_area_fraction():
    g = make_grid([(-1, 1)] * 2, 128, Ball((0, 0), 1.0))
    assert g.mask.mean() == pytest.approx(math.pi / 4, rel=0.02)


def test_disconnected_bitmap_rejected():
    m = np.zeros((16, 16), bool)
    m[2:5, 2:5] = True
    m[10:13, 10:13] = True
    with pytest.raises(ValueError, match="disconnected"):
        make_grid([(0, 1)] * 2, 16, m)


def test_empty_and_small_rejected():
    with pytest.raises(ValueError, match="empty"):
        make_grid([(0, 1)] * 2, 8, Ball((5, 5), 0.1))
    with pytest.raises(ValueError):
        make_grid([(0, 1)] * 2, 3)


def test_dimension_three():
    g = make_grid([(-1, 1)] * 3, 16, Ball((0, 0, 0), 1.0))
    assert g.n == 3
    assert g.measure == pytest.approx(4 / 3 * math.pi, rel=0.05)


def test_diameter_bounds(disk64):
    assert disk64.diameter <= disk64.bbox_diagonal
    assert disk64.diameter == pytest.approx(2.0, abs=2 * disk64.cell_diagonal)


def test_sample_constant_and_singular(disk64, square32):
    one = sample(lambda x: np.ones(len(x)), square32)
    assert np.all(one.masked == 1)
    f = sample(lambda x: np.linalg.norm(x, axis=-1) ** -0.5, disk64)
    assert np.isfinite(f.max_abs())


def test_sample_nonfinite_names_cell():
    g = make_grid([(-1, 1)] * 2, 9)  # odd count: a center sits on the origin
    with pytest.raises(ValueError, match=r"cell \(4, 4\)"):
        sample(lambda x: 1 / np.linalg.norm(x, axis=-1), g)


def test_sample_half_indicator(square32):
    f = sample(lambda x: (x[:, 0] < 0.5).astype(float), square32)
    assert set(np.unique(f.masked)) <= {0.0, 1.0}
    assert integrate(f) == pytest.approx(0.5, rel=1e-12)


def test_values_outside_mask_are_zero(disk32):
    f = ScalarField(disk32, np.ones(disk32.shape))
    assert np.all(f.values[~disk32.mask] == 0)
    with pytest.raises(ValueError, match="non-finite"):
        ScalarField(disk32, np.full(disk32.shape, np.nan))


def test_integrate_volume_and_ball():
    sq = make_grid([(0, 1)] * 2, 64)
    assert integrate(sample(lambda x: np.ones(len(x)), sq)) == pytest.approx(1.0, abs=4 / 64)
    g = make_grid([(-1, 1)] * 2, 128)
    one = sample(lambda x: np.ones(len(x)), g)
    assert integrate(one, Ball((0, 0), 0.5)) == pytest.approx(math.pi * 0.25, rel=0.02)
    assert integrate(0 * one) == 0


def test_integrate_empty_region_warns(disk32):
    one = ScalarField(disk32, np.ones(disk32.shape))
    with pytest.warns(EmptyRegionWarning):
        assert integrate(one, Ball((3.0, 3.0), 0.1)) == 0.0


def test_integrate_second_order_on_sinusoid():
    errs = []
    for N in (16, 32, 64):
        g = make_grid([(0, 1)] * 2, N)
        f = sample(lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), g)
        errs.append(abs(integrate(f) - 4 / math.pi**2))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_integrate_linear(a, b, seed):
    g = make_grid([(-1, 1)] * 2, 16, Ball((0, 0), 1.0))
    rng = np.random.default_rng(seed)
    f = ScalarField(g, rng.normal(size=g.shape))
    h = ScalarField(g, rng.normal(size=g.shape))
    lhs = integrate(a * f + b * h)
    rhs = a * integrate(f) + b * integrate(h)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_ball_family_counts_and_ladder():
    g = make_grid([(0, 1)] * 2, 64)
    fam = ball_family(g, 8, 6)
    assert len(fam.center_index) <= 64
    assert len(fam) == len(fam.center_index) * 6
    assert fam.radii[0] == pytest.approx(2 * g.h)
    assert fam.radii[-1] == pytest.approx(g.diameter)
    with pytest.raises(ValueError):
        ball_family(g, 0, 6)
    with pytest.raises(ValueError):
        ball_family(g, 4, 1)


def test_ball_family_dense_and_anchor(disk32):
    assert ball_family(disk32, 1, 4).dense
    fam = ball_family(disk32, 8, 4, anchors=[(0.0, 0.0)])
    assert disk32.nearest_masked((0, 0)) in {tuple(c) for c in fam.center_index}


def test_ball_family_invalid_radii(disk32):
    with pytest.raises(ValueError, match="increasing"):
        ball_family(disk32, 4, radii=[0.5, 0.2])


@given(st.integers(0, 2**31))
def test_finer_ladder_is_monotone(seed):
    g = make_grid([(-1, 1)] * 2, 16, Ball((0, 0), 1.0))
    vals = np.abs(np.random.default_rng(seed).normal(size=g.shape)) * g.mask
    coarse = ball_family(g, 2, radii=np.geomspace(2 * g.h, g.diameter, 6)[::2])
    fine = ball_family(g, 2, radii=np.geomspace(2 * g.h, g.diameter, 6))
    # FFT sums carry round-off of order 1e-16
    assert family_integrals(vals, fine).max() >= family_integrals(vals, coarse).max() * (1 - 1e-12)


def test_ball_stencil_is_open():
    g = make_grid([(0, 1)] * 2, 10)
    st_ = ball_stencil(g, 2 * g.h)
    # the cell two spacings away along an axis is on the sphere, not inside
    assert not st_[st_.shape[0] // 2 + 2, st_.shape[1] // 2]
    assert st_[st_.shape[0] // 2 + 1, st_.shape[1] // 2]


@given(st.integers(0, 2**31), st.floats(0.05, 1.5))
def test_ball_sums_match_brute_force(seed, r):
    g = make_grid([(-1, 1)] * 2, 12, Ball((0, 0), 1.0))
    # cells exactly on the sphere are decided by rounding; stay away from those radii
    i, j = np.meshgrid(np.arange(12), np.arange(12))
    assume(np.min(np.abs(g.h * np.hypot(i, j) - r)) > 1e-9)
    v = np.random.default_rng(seed).normal(size=g.shape) * g.mask
    fast = ball_sums(v, g, r)
    c = g.centers
    for idx in [(6, 6), (2, 5), (9, 3)]:
        inside = np.linalg.norm(c - c[idx], axis=-1) < r
        assert fast[idx] == pytest.approx(v[inside].sum(), abs=1e-10)


def test_bank_agrees_with_ball_sums(disk32):
    radii = np.geomspace(2 * disk32.h, disk32.diameter, 5)
    bank = BallSumBank.build(disk32, radii)
    v = np.random.default_rng(1).normal(size=disk32.shape) * disk32.mask
    got = bank.sums(v)
    for j, r in enumerate(radii):
        np.testing.assert_allclose(got[j], ball_sums(v, disk32, r), atol=1e-10)
    # weighted_spread is the adjoint of sums
    w = np.random.default_rng(2).normal(size=(5,) + disk32.shape)
    assert np.sum(w * bank.sums(v)) == pytest.approx(np.sum(v * bank.weighted_spread(w)), rel=1e-10)


def test_shape_ids_round_trip():
    shapes = [
        Box((0.0, 0.0), (1.0, 2.0)),
        Ball((0.5, -0.5), 0.25, closed=False),
        Annulus((0.0, 0.0), 0.2, 0.3),
        Union((Ball((0.0, 0.0), 0.1), Ball((0.5, 0.0), 0.2))),
    ]
    for s in shapes:
        assert shape_from_id(s.id).id == s.id
    with pytest.raises(ValueError):
        shape_from_id("teapot(x=1)")


def test_snapshot_round_trip(tmp_path, disk32):
    f = ScalarField(disk32, np.random.default_rng(3).normal(size=disk32.shape))
    path = write_field(f, tmp_path / "f.fld")
    head = path.read_bytes().split(b"\nend\n")[0].decode()
    assert "dimension 2" in head and "shape 32 32" in head
    g = read_field(path)
    np.testing.assert_array_equal(g.values, f.values)
    assert g.grid.mask_id == disk32.mask_id


def test_snapshot_with_bitmap_mask(tmp_path):
    m = np.zeros((12, 12), bool)
    m[2:10, 3:9] = True
    g = make_grid([(0, 1)] * 2, 12, m)
    f = ScalarField(g, np.arange(144.0).reshape(12, 12))
    write_field(f, tmp_path / "b.fld")
    back = read_field(tmp_path / "b.fld")
    np.testing.assert_array_equal(back.grid.mask, m)
    np.testing.assert_array_equal(back.values, f.values)


def test_pgm_mask(tmp_path):
    m = np.zeros((10, 10), bool)
    m[1:8, 2:9] = True
    p = write_pgm(m, tmp_path / "m.pgm")
    g = make_grid([(0, 1)] * 2, 10, str(p))
    np.testing.assert_array_equal(g.mask, m)
    assert isinstance(shape_from_id("box"), Box)
    assert Bitmap(m, "m").contains(g.centers).sum() == m.sum()


def test_fields_on_different_grids_do_not_mix(disk32, square32):
    with pytest.raises(ValueError, match="different grids"):
        ScalarField(disk32, np.ones(disk32.shape)) + ScalarField(square32, np.ones(square32.shape))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert (ScalarField(disk32, np.ones(disk32.shape)) * 2).max_abs() == 2

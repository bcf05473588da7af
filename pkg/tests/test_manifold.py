import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geognn import manifold as mf
from geognn.manifold import (
    CURVATURE_GRID,
    DomainError,
    KleinPoint,
    ManifoldError,
    PoincarePoint,
    TangentVector,
)


def test_exp_map_unit_vector():
    # tanh(1) for c = 1; tanh(sqrt(c)|v|) v / (sqrt(c)|v|) = 2 tanh(1) for c = 0.25, v = (2, 0)
    assert mf.exp_map0(np.array([1.0, 0.0]), 1.0)[0] == pytest.approx(math.tanh(1.0), abs=1e-12)
    assert mf.exp_map0(np.array([2.0, 0.0]), 0.25)[0] == pytest.approx(2 * math.tanh(1.0), abs=1e-12)
    assert mf.exp_map0(np.array([1.0, 0.0]), 1.0)[0] == pytest.approx(0.76159, abs=1e-5)
    assert mf.exp_map0(np.array([2.0, 0.0]), 0.25)[0] == pytest.approx(1.52318, abs=1e-5)


def test_exp_zero_and_log_origin():
    assert np.array_equal(mf.exp_map0(np.zeros(3), 1.0), np.zeros(3))
    assert np.array_equal(mf.log_map0(np.zeros(3), 0.5), np.zeros(3))


def test_log_map_known_value():
    assert mf.log_map0(np.array([0.5, 0.0]), 1.0)[0] == pytest.approx(math.atanh(0.5), abs=1e-12)
    assert mf.log_map0(np.array([0.5, 0.0]), 1.0)[0] == pytest.approx(0.54931, abs=1e-5)


def test_klein_conversion_known_value():
    k = mf.poincare_to_klein(np.array([0.5, 0.0]), 1.0)
    assert k == pytest.approx([0.8, 0.0], abs=1e-12)
    assert mf.klein_to_poincare(k, 1.0) == pytest.approx([0.5, 0.0], abs=1e-12)


def test_klein_mean_cases():
    p = np.array([[0.3, -0.2]])
    assert mf.klein_mean(p, 1.0) == pytest.approx(p[0], abs=1e-12)
    sym = np.array([[0.4, 0.1], [-0.4, -0.1]])
    assert np.linalg.norm(mf.klein_mean(sym, 0.7)) < 1e-12
    m = mf.klein_mean(np.array([[0.5, 0.0], [0.0, 0.0]]), 1.0)
    # Klein mean 0.4 maps back to 0.4 / (1 + sqrt(0.84))
    assert m[0] == pytest.approx(0.4 / (1 + math.sqrt(0.84)), abs=1e-12)
    assert m[0] == pytest.approx(0.20871, abs=1e-5)


def test_klein_mean_empty_raises():
    with pytest.raises(ManifoldError):
        mf.klein_mean(np.zeros((0, 2)), 1.0)


def test_lorentz_weighted_mean_is_opt_in():
    pts = np.array([[0.9, 0.0], [0.0, 0.1]])
    a = mf.klein_mean(pts, 1.0)
    b = mf.klein_mean(pts, 1.0, mode="lorentz_weighted")
    assert not np.allclose(a, b)
    # the weighted mean is pulled toward the high-gamma point
    assert b[0] > a[0]


def test_distance_known_value():
    # d(0, x) = 2 atanh(|x|) for c = 1
    assert mf.hyperbolic_distance(np.zeros(2), np.array([0.5, 0.0]), 1.0) == pytest.approx(2 * math.atanh(0.5))
    assert float(mf.hyperbolic_distance(np.zeros(2), np.array([0.5, 0.0]), 1.0)) == pytest.approx(1.09861, abs=1e-5)


def test_projection_rule():
    c = 4.0
    r = (1 - 1e-5) / 2.0
    inside = np.array([0.49, 0.0])
    assert np.array_equal(mf.project_to_ball(inside, c), inside)
    out = mf.project_to_ball(np.array([3.0, 4.0]), c)
    assert np.linalg.norm(out) == pytest.approx(r, rel=1e-12)
    assert out[0] / out[1] == pytest.approx(0.75)


def test_exp_saturates_inside_ball():
    for c in CURVATURE_GRID:
        x = mf.exp_map0(np.array([50.0, 50.0]), c)
        assert math.sqrt(c) * np.linalg.norm(x) < 1.0
        assert np.all(np.isfinite(mf.log_map0(x, c)))


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_curvature(bad):
    with pytest.raises(ManifoldError):
        mf.exp_map0(np.ones(2), bad)


def test_domain_errors():
    with pytest.raises(DomainError):
        mf.log_map0(np.array([1.5, 0.0]), 1.0)
    with pytest.raises(DomainError):
        mf.klein_to_poincare(np.array([1.2, 0.0]), 1.0)
    with pytest.raises(ManifoldError):
        mf.exp_map0(np.array([np.nan, 0.0]), 1.0)


def test_typed_points_round_trip():
    v = TangentVector(np.array([0.3, -1.2]), 0.5)
    p = v.exp0()
    assert isinstance(p, PoincarePoint)
    assert p.log0().coords == pytest.approx(v.coords, abs=1e-12)
    k = p.to_klein()
    assert isinstance(k, KleinPoint)
    assert k.to_poincare().coords == pytest.approx(p.coords, abs=1e-12)
    assert p.distance(p) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(DomainError):
        PoincarePoint(np.array([2.0, 0.0]), 1.0)


vectors = arrays(np.float64, st.integers(1, 6), elements=st.floats(-1.7, 1.7))


@settings(max_examples=200, deadline=None)
@given(v=vectors, c=st.sampled_from(CURVATURE_GRID))
def test_log_exp_round_trip(v, c):
    back = mf.log_map0(mf.exp_map0(v, c), c)
    assert np.linalg.norm(back - v) <= 1e-6 * max(1.0, np.linalg.norm(v))


@settings(max_examples=200, deadline=None)
@given(v=vectors, c=st.sampled_from(CURVATURE_GRID))
def test_klein_round_trip(v, c):
    x = mf.exp_map0(v, c)
    assert np.linalg.norm(mf.klein_to_poincare(mf.poincare_to_klein(x, c), c) - x) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(pts=arrays(np.float64, st.tuples(st.integers(1, 8), st.just(3)), elements=st.floats(-10, 10)),
       c=st.sampled_from(CURVATURE_GRID))
def test_klein_mean_stays_inside(pts, c):
    ball = mf.exp_map0(pts, c)
    m = mf.klein_mean(ball, c)
    assert math.sqrt(c) * np.linalg.norm(m) < 1.0


def test_distance_symmetry_and_triangle(rng):
    c = 0.75
    x, y, z = (mf.exp_map0(rng.normal(size=3), c) for _ in range(3))
    dxy = mf.hyperbolic_distance(x, y, c)
    assert dxy == pytest.approx(mf.hyperbolic_distance(y, x, c))
    assert dxy <= mf.hyperbolic_distance(x, z, c) + mf.hyperbolic_distance(z, y, c) + 1e-12

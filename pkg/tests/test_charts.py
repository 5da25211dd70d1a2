import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attreach import so3
from attreach.charts import (
    ExpChart,
    GeodesicState,
    ball_boundary,
    ball_interior_samples,
    best_chart,
    chart_coverage,
    chart_geodesic_flow,
    chart_geodesic_step,
    chart_inverse,
    chart_map,
    chart_velocity_factor,
    fibonacci_sphere,
    points_array,
)
from attreach.errors import BallStraddlesCharts, ChartBoundaryHit, OutOfRange, OutsideChartDomain
from attreach.metrics import geodesic_distance_q, geodesic_flow

seeds = st.integers(0, 2**32 - 1)


def test_chart_offsets():
    for i in range(4):
        lam = ExpChart(i).lam
        assert so3.is_rotation(lam)
        assert np.array_equal(lam, np.diag(lam.diagonal()))
    assert np.array_equal(ExpChart(0).lam, np.eye(3))
    with pytest.raises(ValueError):
        ExpChart(4)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_every_rotation_lies_in_some_chart(seed):
    r = so3.random_rotation(np.random.default_rng(seed))
    charts = chart_coverage(r)
    assert charts
    assert best_chart(r).index in charts
    for i in charts:
        np.testing.assert_allclose(chart_inverse(i, chart_map(i, r)), r, atol=1e-10)


def test_best_chart_margin_is_bounded_below(rng):
    # the four trace margins sum to 4, so the best one is at least 1
    for r in so3.random_rotation(rng, 200):
        lr = best_chart(r).lam @ r
        assert np.trace(lr) + 1.0 >= 1.0 - 1e-12


def test_domain_errors():
    with pytest.raises(OutsideChartDomain):
        chart_map(0, np.diag([1.0, -1.0, -1.0]))
    with pytest.raises(OutOfRange):
        chart_inverse(0, [math.pi, 0.0, 0.0])
    with pytest.raises(OutOfRange):
        chart_velocity_factor([0.0, 4.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_velocity_factor_inverse_identity(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=3)
    r *= rng.uniform(0.0, math.pi - 1e-3) / np.linalg.norm(r)
    np.testing.assert_allclose(chart_velocity_factor(r) @ so3.dexp(r), np.eye(3), atol=1e-9)


def test_unit_metric_boundary_is_a_round_sphere():
    pts = ball_boundary(np.eye(3), np.eye(3), 0.3, 100)
    assert len(pts) == 100
    assert {p.chart for p in pts} == {0}
    np.testing.assert_allclose(np.linalg.norm(points_array(pts), axis=1), 0.3, atol=1e-9)


def test_boundary_in_another_chart(rng):
    # center deep inside chart 2: the boundary is a sphere about the center's coordinates
    center = ExpChart(2).lam @ so3.exp_so3([0.1, 0.2, -0.1])
    pts = ball_boundary(2.0 * np.eye(3), center, 0.2, 50)
    assert {p.chart for p in pts} == {2}
    got = np.array([so3.bi_invariant_distance(center, chart_inverse(2, p.r)) for p in pts])
    np.testing.assert_allclose(got, 0.2 / math.sqrt(2.0), atol=1e-9)


def test_anisotropic_boundary_sits_at_the_radius(rng):
    q = np.array([[1.5, 0.2, 0.0], [0.2, 1.0, 0.1], [0.0, 0.1, 2.5]])
    center = so3.exp_so3([0.2, -0.1, 0.3])
    pts = ball_boundary(q, center, 0.4, 20)
    for p in pts:
        d = geodesic_distance_q(q, center, chart_inverse(p.chart, p.r))
        assert d == pytest.approx(0.4, abs=1e-8)
    inner = ball_interior_samples(q, center, 0.4, 20)
    for p in inner:
        assert geodesic_distance_q(q, center, chart_inverse(p.chart, p.r)) < 0.4


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_chart_and_group_geodesics_agree(seed):
    rng = np.random.default_rng(seed)
    u = so3.random_rotation(rng)
    q = (u * np.exp(rng.uniform(0.0, math.log(10.0), size=3))) @ u.T
    r0 = so3.exp_so3(rng.normal(size=3) * 0.3)
    w0 = rng.normal(size=3)
    w0 *= rng.uniform(0.1, 1.0) / np.linalg.norm(w0)
    chart = best_chart(r0)
    gs = chart_geodesic_flow(chart, q, chart_map(chart, r0), w0)
    r_group, w_group = geodesic_flow(q, r0, w0)
    np.testing.assert_allclose(chart_inverse(chart, gs.r), r_group, atol=1e-7)
    np.testing.assert_allclose(gs.w, w_group, atol=1e-7)


def test_chart_step_stops_at_the_cut_sphere():
    gs = GeodesicState(np.array([math.pi - 0.06, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ChartBoundaryHit):
        chart_geodesic_step(0, np.eye(3), gs, 0.02)


def test_large_ball_straddles_charts():
    with pytest.raises(BallStraddlesCharts):
        ball_boundary(np.eye(3), np.eye(3), 3.1, 50)


def test_beyond_shooting_radius_is_refused():
    q = np.diag([1.0, 1.2, 1.4])
    with pytest.raises(ValueError):
        ball_boundary(q, np.eye(3), 2.2, 30)


def test_empty_requests():
    assert ball_boundary(np.eye(3), np.eye(3), 0.3, 0) == []
    assert points_array([]).shape == (0, 3)
    assert fibonacci_sphere(0).shape == (0, 3)


def test_fibonacci_points_are_unit_and_balanced():
    d = fibonacci_sphere(500)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-14)
    assert np.max(np.abs(d.mean(axis=0))) < 0.01


def test_interior_fill_is_volume_uniform():
    pts = points_array(ball_interior_samples(np.eye(3), np.eye(3), 1.0, 4000))
    rho = np.linalg.norm(pts, axis=1)
    assert rho.max() < 1.0
    # fraction inside half the radius should be about 1/8
    assert abs(np.mean(rho < 0.5) - 0.125) < 0.01

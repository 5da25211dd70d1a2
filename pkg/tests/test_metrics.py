import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attreach import so3
from attreach.errors import ShootingDiverged, ShootingRadiusExceeded
from attreach.metrics import (
    MetricBall,
    MetricPair,
    State,
    as_spd,
    ball_contains,
    ball_inclusion,
    geodesic_distance_q,
    geodesic_endpoint,
    geodesic_flow,
    geodesic_flow_reference,
    p_distance,
    product_distance,
    q_distance_bounds,
    q_norm,
    reduced_geodesic_rhs,
    shoot,
)


def random_spd(rng, cond=10.0, scale=1.0):
    u = so3.random_rotation(rng)
    lam = scale * np.exp(rng.uniform(0.0, math.log(cond), size=3))
    return (u * lam) @ u.T


def random_in_ball(rng, radius):
    v = rng.normal(size=3)
    return v * (radius * rng.uniform() / np.linalg.norm(v))


seeds = st.integers(0, 2**32 - 1)


def test_as_spd_validation():
    with pytest.raises(ValueError):
        as_spd(np.diag([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        as_spd(np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(ValueError):
        as_spd(np.full((3, 3), np.nan))


def test_state_validation():
    with pytest.raises(ValueError):
        State(2 * np.eye(3), [0, 0, 0])
    with pytest.raises(ValueError):
        State(np.eye(3), [0, 0, np.inf])


def test_reduced_rhs_vanishes_for_isotropic_metric(rng):
    w = rng.normal(size=(10, 3))
    np.testing.assert_allclose(reduced_geodesic_rhs(2.5 * np.eye(3), w), 0.0, atol=1e-14)


def test_kernel_matches_numpy_reference(rng):
    q = random_spd(rng, 50.0)
    r0 = so3.random_rotation(rng)
    w0 = rng.normal(size=(5, 3))
    r_a, w_a = geodesic_flow(q, r0, w0, 0.7)
    r_b, w_b = geodesic_flow_reference(q, r0, w0, 0.7)
    np.testing.assert_allclose(r_a, r_b, atol=1e-12)
    np.testing.assert_allclose(w_a, w_b, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_geodesic_conserves_kinetic_energy(seed):
    # RK4 drift scales like (h cond(Q) |w|)^4; this stays well inside the resolved regime
    rng = np.random.default_rng(seed)
    q = random_spd(rng, 10.0)
    w0 = random_in_ball(rng, 3.0)
    e0 = w0 @ q @ w0
    for t in (0.25, 0.5, 1.0):
        _, w = geodesic_flow(q, np.eye(3), w0, t)
        assert abs(w @ q @ w - e0) <= 1e-9 * e0


def test_geodesic_conserves_momentum_norm(rng):
    # spatial momentum R Q w is constant along geodesics of a left-invariant metric
    q = random_spd(rng, 20.0)
    w0 = rng.normal(size=3)
    r0 = so3.random_rotation(rng)
    m0 = r0 @ q @ w0
    for t in (0.3, 1.0):
        r, w = geodesic_flow(q, r0, w0, t)
        np.testing.assert_allclose(r @ q @ w, m0, atol=1e-10)


def test_geodesic_is_fourth_order(rng):
    q = np.diag([1.0, 3.0, 7.0])
    # fast spin so that the admissible steps produce measurable error
    w0 = 40.0 * np.array([0.8, -0.5, 0.4])
    ref, _ = geodesic_flow(q, np.eye(3), w0, 1.0, 1e-4)
    errs = [np.linalg.norm(geodesic_flow(q, np.eye(3), w0, 1.0, h)[0] - ref) for h in (1e-3, 5e-4)]
    assert 12.0 < errs[0] / errs[1] < 20.0


def test_isotropic_endpoint_is_one_parameter_subgroup(rng):
    r0 = so3.random_rotation(rng)
    w0 = rng.normal(size=3)
    np.testing.assert_allclose(geodesic_endpoint(4.0 * np.eye(3), r0, w0), r0 @ so3.exp_so3(w0), atol=1e-15)
    flow, _ = geodesic_flow(4.0 * np.eye(3), r0, w0)
    np.testing.assert_allclose(flow, r0 @ so3.exp_so3(w0), atol=1e-12)


def test_endpoint_time_range():
    with pytest.raises(ValueError):
        geodesic_endpoint(np.eye(3), np.eye(3), np.zeros(3), 1.5)
    with pytest.raises(ValueError):
        geodesic_flow(np.diag([1.0, 2.0, 3.0]), np.eye(3), np.ones(3), 1.0, h=0.1)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_shooting_inverts_the_exponential(seed):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, 10.0)
    r1 = so3.random_rotation(rng)
    w0 = random_in_ball(rng, 1.0)
    # keep the target inside the shooting radius
    r2 = geodesic_endpoint(q, r1, w0)
    if so3.bi_invariant_distance(r1, r2) > 1.4:
        return
    sol = shoot(q, r1, r2)
    assert sol.converged
    np.testing.assert_allclose(geodesic_endpoint(q, r1, sol.w0), r2, atol=1e-9)


def _hard_case(seed, cond):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, cond)
    r1 = so3.random_rotation(rng)
    return rng, q, r1


def test_shooting_finds_the_shorter_geodesic():
    # the geodesic that generated the target is not minimal; continuation finds a shorter one
    rng, q, r1 = _hard_case(1065154845, 100.0)
    w_gen = random_in_ball(rng, 1.0)
    r2 = geodesic_endpoint(q, r1, w_gen)
    sol = shoot(q, r1, r2)
    assert sol.converged
    assert sol.distance < q_norm(q, w_gen) - 0.1
    np.testing.assert_allclose(geodesic_endpoint(q, r1, sol.w0), r2, atol=1e-9)


def test_ill_conditioned_shooting_is_flagged():
    # condition number ~400: neither Newton nor continuation converges, and that is reported
    rng, q, r1 = _hard_case(7, 1000.0)
    v = rng.normal(size=3)
    r2 = r1 @ so3.exp_so3(v * (1.5 * rng.uniform() / np.linalg.norm(v)))
    sol = shoot(q, r1, r2)
    assert not sol.converged
    with pytest.raises(ShootingDiverged):
        geodesic_distance_q(q, r1, r2)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_shooting_converges_for_moderate_anisotropy(seed):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, 30.0)
    r1 = so3.random_rotation(rng)
    v = random_in_ball(rng, 1.5)
    sol = shoot(q, r1, r1 @ so3.exp_so3(v))
    assert sol.converged
    assert sol.distance <= q_norm(q, v) + 1e-6


def test_distance_of_short_geodesic_is_its_length(rng):
    q = np.diag([1.0, 2.0, 5.0])
    w0 = np.array([0.05, -0.08, 0.03])
    r2 = geodesic_endpoint(q, np.eye(3), w0)
    assert geodesic_distance_q(q, np.eye(3), r2) == pytest.approx(q_norm(q, w0), abs=1e-10)


def test_isotropic_distance_closed_form(rng):
    r1, r2 = so3.random_rotation(rng, 2)
    d = geodesic_distance_q(9.0 * np.eye(3), r1, r2)
    assert d == pytest.approx(3.0 * so3.bi_invariant_distance(r1, r2), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_distance_bounds_bracket_shooting(seed):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, 30.0)
    r1 = so3.random_rotation(rng)
    r2 = r1 @ so3.exp_so3(random_in_ball(rng, 1.2))
    lo, hi = q_distance_bounds(q, r1, r2)
    d = geodesic_distance_q(q, r1, r2)
    assert lo - 1e-9 <= d <= hi + 1e-9


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_distance_is_left_invariant_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, 10.0)
    r1 = so3.random_rotation(rng)
    r2 = r1 @ so3.exp_so3(random_in_ball(rng, 1.0))
    g = so3.random_rotation(rng)
    d = geodesic_distance_q(q, r1, r2)
    assert geodesic_distance_q(q, g @ r1, g @ r2) == pytest.approx(d, abs=1e-8)
    assert geodesic_distance_q(q, r2, r1) == pytest.approx(d, abs=1e-8)


def test_shooting_radius_is_enforced():
    q = np.diag([1.0, 2.0, 3.0])
    far = so3.exp_so3([2.0, 0.0, 0.0])
    with pytest.raises(ShootingRadiusExceeded):
        geodesic_distance_q(q, np.eye(3), far)
    assert issubclass(ShootingRadiusExceeded, ShootingDiverged)
    # a larger configured radius lets it through
    assert geodesic_distance_q(q, np.eye(3), far, shooting_radius=2.5) > 0.0


def test_p_distance_and_product_distance(rng):
    p = random_spd(rng)
    x, y = rng.normal(size=(2, 3))
    assert p_distance(p, x, y) == pytest.approx(math.sqrt((x - y) @ p @ (x - y)))
    m = MetricPair(np.diag([1.0, 2.0, 3.0]), p)
    r2 = so3.exp_so3([0.1, 0.2, -0.1])
    d = product_distance(m, State(np.eye(3), x), State(r2, y))
    dq = geodesic_distance_q(m.q, np.eye(3), r2)
    assert d == pytest.approx(math.hypot(dq, p_distance(p, x, y)), abs=1e-12)


def test_ball_contains():
    ball = MetricBall(State(np.eye(3), np.zeros(3)), 0.5, MetricPair.identity())
    assert ball_contains(ball, State(so3.exp_so3([0.3, 0, 0]), [0.3, 0, 0]))
    assert not ball_contains(ball, State(so3.exp_so3([0.4, 0, 0]), [0.4, 0, 0]))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_larger_metric_gives_smaller_ball(seed):
    rng = np.random.default_rng(seed)
    q2, p2 = random_spd(rng, 5.0), random_spd(rng, 5.0)
    m2 = MetricPair(q2, p2)
    m1 = MetricPair(q2 + random_spd(rng, 5.0, 0.1), p2 + random_spd(rng, 5.0, 0.1))
    assert ball_inclusion(m1, m2)
    assert not ball_inclusion(m2, m1)
    center = State(so3.random_rotation(rng), rng.normal(size=3))
    for _ in range(5):
        s = State(center.r @ so3.exp_so3(random_in_ball(rng, 0.5)), center.omega + random_in_ball(rng, 0.5))
        d1 = product_distance(m1, center, s)
        d2 = product_distance(m2, center, s)
        assert d2 <= d1 + 1e-7

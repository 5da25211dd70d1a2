import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from attreach import so3
from attreach.dynamics import (
    AttitudeSystem,
    LinearRateLaw,
    ZeroTorque,
    damping_law,
    pointwise,
    simulate,
    simulate_batch,
    simulate_dense,
    step,
    vector_field,
)
from attreach.metrics import State

J_DAMPED = np.diag([-2.0, -1.0, -3.0])
J_BODY = np.diag([1.0, 2.0, 3.5])


def test_damping_law_closed_loop_is_linear(rng):
    sys = AttitudeSystem(J_DAMPED, damping_law(J_DAMPED))
    w0 = np.array([0.65, 0.54, 0.61])
    traj = simulate(sys, State(np.eye(3), w0), np.linspace(0, 4, 9))
    for t, w in zip(traj.times, traj.omegas):
        np.testing.assert_allclose(w, expm(J_DAMPED * t) @ w0, atol=1e-12)


def test_linear_rate_law_with_coupled_gain(rng):
    k = np.array([[-1.0, 0.4, 0.0], [-0.4, -1.0, 0.2], [0.0, -0.2, -0.5]])
    sys = AttitudeSystem(J_BODY, LinearRateLaw(J_BODY, k))
    w0 = rng.normal(size=3)
    traj = simulate(sys, State(np.eye(3), w0), [0.0, 1.0, 2.0])
    np.testing.assert_allclose(traj.omegas[-1], expm(2.0 * k) @ w0, atol=1e-11)


def test_free_body_conserves_energy_and_momentum(rng):
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    r0 = so3.random_rotation(rng)
    w0 = np.array([0.3, 1.1, -0.4])
    traj = simulate(sys, State(r0, w0), np.linspace(0, 5, 6))
    e0 = w0 @ J_BODY @ w0
    m0 = r0 @ J_BODY @ w0
    for r, w in zip(traj.rotations, traj.omegas):
        assert abs(w @ J_BODY @ w - e0) < 1e-11
        np.testing.assert_allclose(r @ J_BODY @ w, m0, atol=1e-11)
        assert so3.is_rotation(r, 1e-12)


def test_symmetric_body_spins_about_a_fixed_axis(rng):
    sys = AttitudeSystem(2.0 * np.eye(3), ZeroTorque())
    r0 = so3.random_rotation(rng)
    w0 = np.array([0.7, -0.2, 1.3])
    traj = simulate(sys, State(r0, w0), [0.0, 0.5, 3.0])
    for t, r in zip(traj.times, traj.rotations):
        np.testing.assert_allclose(r, r0 @ so3.exp_so3(t * w0), atol=1e-12)


def test_matches_independent_ode_solver(rng):
    # integrate the same equations in embedded coordinates with scipy
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    r0 = so3.random_rotation(rng)
    w0 = np.array([0.5, -0.9, 0.8])

    def rhs(_, y):
        r = y[:9].reshape(3, 3)
        w = y[9:]
        return np.concatenate([(r @ so3.hat(w)).ravel(), sys.omega_dot(r, w)])

    sol = solve_ivp(rhs, (0, 2), np.concatenate([r0.ravel(), w0]), rtol=1e-12, atol=1e-12)
    traj = simulate(sys, State(r0, w0), [0.0, 2.0])
    np.testing.assert_allclose(traj.rotations[-1], sol.y[:9, -1].reshape(3, 3), atol=1e-9)
    np.testing.assert_allclose(traj.omegas[-1], sol.y[9:, -1], atol=1e-9)


def test_integrator_is_fourth_order():
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    s0 = State(np.eye(3), np.array([2.0, -3.0, 1.5]))
    ref = simulate(sys, s0, [0.0, 1.0], h_max=2.5e-4)
    errs = [np.linalg.norm(simulate(sys, s0, [0.0, 1.0], h_max=h).rotations[-1] - ref.rotations[-1]) for h in (0.04, 0.02)]
    assert 12.0 < errs[0] / errs[1] < 20.0


def test_pointwise_law_matches_batched_law(rng):
    batched = damping_law(J_DAMPED)
    lifted = pointwise(lambda r, w: batched(r, w), depends_on_rotation=False)
    r = so3.random_rotation(rng, 4)
    w = rng.normal(size=(4, 3))
    np.testing.assert_allclose(lifted(r, w), batched(r, w), atol=1e-15)
    assert lifted.depends_on_rotation is False


def test_batch_equals_single_runs(rng):
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    r0 = so3.random_rotation(rng, 3)
    w0 = rng.normal(size=(3, 3))
    rs, ws = simulate_batch(sys, r0, w0, [0.0, 0.3, 0.6])
    for b in range(3):
        traj = simulate(sys, State(r0[b], w0[b]), [0.0, 0.3, 0.6])
        np.testing.assert_allclose(rs[:, b], traj.rotations, atol=1e-14)
        np.testing.assert_allclose(ws[:, b], traj.omegas, atol=1e-14)


def test_dense_output_covers_every_substep():
    sys = AttitudeSystem(J_DAMPED, damping_law(J_DAMPED))
    r, w, dense = simulate_dense(sys, np.eye(3)[None], np.ones((1, 3)), 0.0, 0.1, 1e-3)
    assert dense.shape[0] == 101
    np.testing.assert_allclose(dense[-1, 0], expm(0.1 * J_DAMPED) @ np.ones(3), atol=1e-12)


def test_vector_field_and_step():
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    s = State(np.eye(3), [0.0, 0.0, 1.0])
    dr, dw = vector_field(sys, s)
    np.testing.assert_allclose(dr, so3.hat([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(dw, 0.0, atol=1e-15)
    nxt = step(sys, s, 0.01)
    np.testing.assert_allclose(nxt.r, so3.exp_so3([0.0, 0.0, 0.01]), atol=1e-14)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        AttitudeSystem(np.zeros((3, 3)), ZeroTorque())
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    s = State(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        step(sys, s, 0.5)
    with pytest.raises(ValueError):
        simulate(sys, s, [0.1, 0.2])
    with pytest.raises(ValueError):
        simulate(sys, s, [0.0, 0.2, 0.1])


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trajectories_stay_on_the_group(seed):
    rng = np.random.default_rng(seed)
    sys = AttitudeSystem(J_BODY, ZeroTorque())
    rs, _ = simulate_batch(sys, so3.random_rotation(rng, 4), 3.0 * rng.normal(size=(4, 3)), [0.0, 0.5])
    assert so3.is_rotation(rs, 1e-12)

"""Left-invariant metrics on SO(3), constant metrics on R^3, and their product.

The rotation factor uses the metric ``<R a^, R b^> = a^T Q b``.  Its distance
has no closed form for anisotropic ``Q``, so :func:`geodesic_distance_q`
solves a boundary value problem by shooting on the reduced geodesic equation
``Q w' = -w x Q w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, so3
from .errors import ShootingDiverged, ShootingRadiusExceeded

PSD_TOL = 1e-10
CONTAIN_TOL = 1e-7
GEODESIC_STEP = 1e-3
SHOOTING_RADIUS = math.pi / 2
SHOOTING_MAX_ITER = 50
SHOOTING_TOL = 1e-10


def as_spd(m, name: str = "matrix") -> np.ndarray:
    """Validate a symmetric positive-definite 3x3 matrix and return an exactly symmetric copy."""
    m = np.array(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ValueError(f"{name} must be a finite 3x3 matrix")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise ValueError(f"{name} is not symmetric")
    m = 0.5 * (m + m.T)
    if np.linalg.eigvalsh(m)[0] <= 1e-12:
        raise ValueError(f"{name} is not positive definite")
    return m


def min_eig(m) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))[..., 0].min())


def loewner_geq(a, b, tol: float = PSD_TOL) -> bool:
    """``a - b`` is positive semidefinite up to ``tol``."""
    return min_eig(np.asarray(a) - np.asarray(b)) >= -tol


def is_isotropic(q: np.ndarray) -> bool:
    s = np.trace(q) / 3.0
    return bool(np.max(np.abs(q - s * np.eye(3))) <= 1e-14 * max(1.0, abs(s)))


@dataclass(frozen=True)
class State:
    """Attitude and body angular velocity."""

    r: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", so3.as_rotation(self.r))
        omega = np.array(self.omega, dtype=float)
        if omega.shape != (3,) or not np.all(np.isfinite(omega)):
            raise ValueError("omega must be a finite 3-vector")
        object.__setattr__(self, "omega", omega)


@dataclass(frozen=True)
class MetricPair:
    """Product metric: ``q`` weights the rotation factor, ``p`` the angular velocity factor."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_spd(self.q, "Q"))
        object.__setattr__(self, "p", as_spd(self.p, "P"))

    @classmethod
    def identity(cls) -> MetricPair:
        return cls(np.eye(3), np.eye(3))


@dataclass(frozen=True)
class MetricBall:
    center: State
    radius: float
    metric: MetricPair

    def __post_init__(self):
        if not (self.radius >= 0.0 and math.isfinite(self.radius)):
            raise ValueError("radius must be finite and non-negative")


@dataclass(frozen=True)
class RotationBall:
    """Ball on SO(3) alone, under the left-invariant metric ``q``."""

    center: np.ndarray
    radius: float
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", so3.as_rotation(self.center))
        object.__setattr__(self, "q", as_spd(self.q, "Q"))
        if not (self.radius >= 0.0 and math.isfinite(self.radius)):
            raise ValueError("radius must be finite and non-negative")


def p_distance(p, x, y) -> np.ndarray | float:
    """``||x - y||_P``, batched over leading axes of ``x`` and ``y``."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    val = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", d, np.asarray(p, dtype=float), d), 0.0))
    return float(val) if np.ndim(val) == 0 else val


def q_norm(q, v) -> np.ndarray | float:
    val = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", v, q, v), 0.0))
    return float(val) if np.ndim(val) == 0 else val


def reduced_geodesic_rhs(q, w, q_inv=None) -> np.ndarray:
    """Right-hand side ``-Q^{-1}(w x Q w)`` of the reduced geodesic equation."""
    q = np.asarray(q, dtype=float)
    if q_inv is None:
        q_inv = np.linalg.inv(q)
    w = np.asarray(w, dtype=float)
    return -so3.cross(w, w @ q.T) @ q_inv.T


def _n_steps(t: float, h: float) -> int:
    return max(1, math.ceil(abs(t) / h - 1e-9))


def _check_step(h: float) -> None:
    if h <= 0.0 or h > GEODESIC_STEP:
        raise ValueError(f"integrator step must lie in (0, {GEODESIC_STEP}]")


def geodesic_flow(q, r0, w0, t: float = 1.0, h: float = GEODESIC_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``R' = R w^``, ``Q w' = -w x Q w`` from ``(r0, w0)`` to time ``t``.

    Runge-Kutta-Munthe-Kaas of order four.  The velocity equation does not
    involve ``R``, so its stage values feed the algebra increments directly.
    Batched over leading axes of ``w0`` (``r0`` broadcasts).

    Returns:
        ``(R(t), w(t))``.
    """
    q = np.asarray(q, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    shape = w0.shape[:-1]
    r = np.ascontiguousarray(np.broadcast_to(np.asarray(r0, dtype=float), shape + (3, 3)).reshape(-1, 3, 3))
    w = np.ascontiguousarray(w0.reshape(-1, 3))
    if t == 0.0:
        return r.reshape(shape + (3, 3)).copy(), w.reshape(shape + (3,)).copy()
    _check_step(h)
    n = _n_steps(t, h)
    r, w = _kernels.geodesic_flow(q, np.linalg.inv(q), r, w, t / n, n)
    return r.reshape(shape + (3, 3)), w.reshape(shape + (3,))


def geodesic_flow_reference(q, r0, w0, t: float = 1.0, h: float = GEODESIC_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized numpy version of :func:`geodesic_flow`, kept as a cross-check."""
    q = np.asarray(q, dtype=float)
    r = np.broadcast_to(np.asarray(r0, dtype=float), np.shape(w0)[:-1] + (3, 3)).copy()
    w = np.array(w0, dtype=float)
    if t == 0.0:
        return r, w
    _check_step(h)
    n = _n_steps(t, h)
    dt = t / n
    q_inv = np.linalg.inv(q)
    for _ in range(n):
        k1 = reduced_geodesic_rhs(q, w, q_inv)
        w2 = w + 0.5 * dt * k1
        k2 = reduced_geodesic_rhs(q, w2, q_inv)
        w3 = w + 0.5 * dt * k2
        k3 = reduced_geodesic_rhs(q, w3, q_inv)
        w4 = w + dt * k3
        k4 = reduced_geodesic_rhs(q, w4, q_inv)
        u2 = so3.dexpinv_apply(0.5 * dt * w, w2)
        u3 = so3.dexpinv_apply(0.5 * dt * u2, w3)
        u4 = so3.dexpinv_apply(dt * u3, w4)
        r = r @ so3.exp_so3(dt / 6.0 * (w + 2.0 * u2 + 2.0 * u3 + u4))
        w = w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r, w


def geodesic_endpoint(q, r0, w0, t: float = 1.0, h: float = GEODESIC_STEP) -> np.ndarray:
    """Point at time ``t`` on the ``Q``-geodesic leaving ``r0`` with reduced velocity ``w0``."""
    q = np.asarray(q, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        return np.broadcast_to(r0, w0.shape[:-1] + (3, 3)).copy()
    if is_isotropic(q):
        # geodesics of a bi-invariant metric are one-parameter subgroups
        return r0 @ so3.exp_so3(t * w0)
    return geodesic_flow(q, r0, w0, t, h)[0]


def q_distance_bounds(q, r1, r2) -> tuple[np.ndarray, np.ndarray]:
    """Cheap bounds ``lo <= d_Q(r1, r2) <= hi``.

    ``lo`` scales the bi-invariant angle by ``sqrt(lambda_min(Q))``; ``hi`` is
    the length of the one-parameter-subgroup curve.
    """
    q = np.asarray(q, dtype=float)
    d_rel = np.swapaxes(np.asarray(r1, dtype=float), -1, -2) @ np.asarray(r2, dtype=float)
    shape = d_rel.shape[:-2]
    d_rel = d_rel.reshape(-1, 3, 3)
    eig = np.linalg.eigvalsh(q)
    ang = so3.rotation_angle(d_rel)
    lo = math.sqrt(eig[0]) * ang
    # near pi the log is ill-defined; fall back to the crude eigenvalue bound
    hi = math.sqrt(eig[-1]) * np.full_like(ang, math.pi)
    ok = ang < math.pi - 1e-6
    if np.any(ok):
        hi[ok] = q_norm(q, so3.log_so3(d_rel[ok]))
    return lo.reshape(shape), hi.reshape(shape)


@dataclass(frozen=True)
class ShootingResult:
    w0: np.ndarray  # (..., 3) reduced initial velocities
    distance: np.ndarray  # (...,) geodesic lengths sqrt(w0^T Q w0)
    converged: np.ndarray  # (...,) bool
    iterations: int


def _newton(q, tgt_t, w, h: float, max_iter: int, tol: float):
    """Batched Newton on ``log(target^T end(w)) = 0``; returns ``(w, converged, iterations)``."""
    n = w.shape[0]
    converged = np.zeros(n, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        active = np.flatnonzero(~converged)
        if active.size == 0:
            break
        wa = w[active]
        eps = 1e-7 * np.maximum(1.0, np.linalg.norm(wa, axis=-1))
        probes = np.repeat(wa[:, None, :], 4, axis=1)
        for k in range(3):
            probes[:, k + 1, k] += eps
        ends = geodesic_flow(q, np.eye(3), probes, 1.0, h)[0]
        res = so3.log_so3(tgt_t[active][:, None] @ ends)
        base = res[:, 0]
        done = np.linalg.norm(base, axis=-1) <= tol
        converged[active[done]] = True
        jac = np.swapaxes((res[:, 1:] - base[:, None, :]) / eps[:, None, None], -1, -2)
        todo = ~done
        if not np.any(todo):
            continue
        step = -(np.linalg.pinv(jac[todo]) @ base[todo][..., None])[..., 0]
        # trust region keeps early iterates inside the injectivity regime
        sn = np.linalg.norm(step, axis=-1)
        step *= np.minimum(1.0, 0.5 / np.maximum(sn, 1e-300))[:, None]
        w[active[todo]] = wa[todo] + step
    return w, converged, it


CONTINUATION_STAGES = 10


def shoot(
    q,
    r1,
    r2,
    h: float = GEODESIC_STEP,
    max_iter: int = SHOOTING_MAX_ITER,
    tol: float = SHOOTING_TOL,
) -> ShootingResult:
    """Solve ``geodesic_endpoint(q, r1, w0, 1) == r2`` for ``w0``, vectorized over a batch.

    Newton iteration with a forward-difference Jacobian, started from the
    one-parameter-subgroup velocity ``log(r1^T r2)``.  Entries that do not
    converge are retried by continuation: the target slides from ``r1`` to
    ``r2`` along ``r1 exp(s log(r1^T r2))`` and each stage warm-starts the next.
    Unconverged entries are flagged rather than raised; see
    :func:`geodesic_distance_q` for the raising form.
    """
    q = np.asarray(q, dtype=float)
    target = np.swapaxes(np.asarray(r1, dtype=float), -1, -2) @ np.asarray(r2, dtype=float)
    batch_shape = target.shape[:-2]
    target = target.reshape(-1, 3, 3)
    w_log = so3.log_so3(target)
    if is_isotropic(q):
        dist = q_norm(q, w_log)
        return ShootingResult(
            w_log.reshape(batch_shape + (3,)),
            np.asarray(dist).reshape(batch_shape),
            np.ones(batch_shape, dtype=bool),
            0,
        )
    w, converged, it = _newton(q, np.swapaxes(target, -1, -2), w_log.copy(), h, max_iter, tol)
    # a geodesic longer than the log curve cannot be minimal, so retry those too
    too_long = q_norm(q, w) > q_norm(q, w_log) + 1e-6
    retry = np.flatnonzero(~converged | too_long)
    if retry.size:
        v = w_log[retry]
        wr = v / CONTINUATION_STAGES
        ok = np.ones(retry.size, dtype=bool)
        for k in range(1, CONTINUATION_STAGES + 1):
            stage_t = np.swapaxes(so3.exp_so3(v * (k / CONTINUATION_STAGES)), -1, -2)
            wr, ok_k, n_k = _newton(q, stage_t, wr, h, max_iter, tol)
            ok &= ok_k
            it += n_k
        better = ok & (~converged[retry] | (q_norm(q, wr) < q_norm(q, w[retry])))
        w[retry] = np.where(better[:, None], wr, w[retry])
        converged[retry] |= ok
    dist = q_norm(q, w)
    return ShootingResult(
        w.reshape(batch_shape + (3,)),
        np.asarray(dist).reshape(batch_shape),
        converged.reshape(batch_shape),
        it,
    )


def geodesic_distance_q(
    q,
    r1,
    r2,
    shooting_radius: float = SHOOTING_RADIUS,
    h: float = GEODESIC_STEP,
) -> np.ndarray | float:
    """Riemannian distance under the left-invariant metric ``Q``.

    Isotropic ``Q = sI`` is handled in closed form (``sqrt(s)`` times the
    bi-invariant angle).  Otherwise the distance is the length of the shot geodesic.

    Raises:
        ShootingRadiusExceeded: if the bi-invariant angle exceeds ``shooting_radius``.
        ShootingDiverged: if Newton fails to converge, or the geodesic found is
            longer than the one-parameter-subgroup curve (so not minimal).
    """
    q = np.asarray(q, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if is_isotropic(q):
        d = math.sqrt(np.trace(q) / 3.0) * so3.rotation_angle(np.swapaxes(r1, -1, -2) @ r2)
        return float(d) if np.ndim(d) == 0 else d
    ang = so3.rotation_angle(np.swapaxes(r1, -1, -2) @ r2)
    if np.any(ang > shooting_radius):
        raise ShootingRadiusExceeded(
            f"bi-invariant angle {np.max(ang):.6g} exceeds the shooting radius {shooting_radius:.6g}"
        )
    sol = shoot(q, r1, r2, h=h)
    if not np.all(sol.converged):
        raise ShootingDiverged(f"geodesic shooting did not converge in {SHOOTING_MAX_ITER} iterations")
    _, hi = q_distance_bounds(q, r1, r2)
    if np.any(sol.distance > hi + 1e-6):
        raise ShootingDiverged("shooting converged to a non-minimal geodesic")
    d = sol.distance
    return float(d) if np.ndim(d) == 0 else d


def product_distance(m: MetricPair, s1: State, s2: State, shooting_radius: float = SHOOTING_RADIUS) -> float:
    """``sqrt(d_Q(R1, R2)^2 + d_P(w1, w2)^2)``."""
    dq = geodesic_distance_q(m.q, s1.r, s2.r, shooting_radius)
    dp = p_distance(m.p, s1.omega, s2.omega)
    return math.sqrt(dq * dq + dp * dp)


def ball_inclusion(m1: MetricPair, m2: MetricPair) -> bool:
    """True iff ``Q1 >= Q2`` and ``P1 >= P2``, so equal-radius balls nest: ball(m1) in ball(m2)."""
    return loewner_geq(m1.q, m2.q) and loewner_geq(m1.p, m2.p)


def ball_contains(ball: MetricBall, s: State, tol: float = CONTAIN_TOL) -> bool:
    return product_distance(ball.metric, ball.center, s) <= ball.radius + tol

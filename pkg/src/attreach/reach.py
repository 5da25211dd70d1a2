"""Reachable-set over-approximation by per-step contraction certificates.

Each step bounds the angular velocities visited over ``[t_i, t_{i+1}]``,
certifies a metric and rate over that box, and grows the ball radius by
``exp(c * dt)``.  Monte-Carlo helpers audit the result against simulations.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

from . import so3
from .contraction import (
    VERTEX_CAP,
    Certificate,
    IntervalMatrix,
    SearchRegion,
    check_certificate,
    jacobian_A,
    jacobian_B,
)
from .dynamics import H_MAX, AttitudeSystem, Trajectory, simulate, simulate_batch, simulate_dense
from .errors import NoFeasibleRate, TubeBoundDiverged
from .metrics import (
    CONTAIN_TOL,
    SHOOTING_RADIUS,
    MetricBall,
    MetricPair,
    RotationBall,
    State,
    is_isotropic,
    p_distance,
    q_distance_bounds,
    shoot,
)
from .sdp import SdpBackend, line_search

log = logging.getLogger(__name__)

MAX_TUBE_SPAN = 0.5
TUBE_ROUNDS = 20
TUBE_INFLATE = 0.1
ENCLOSURE_PAD = 1e-9
ROTATION_PROBE_TOL = 1e-8
COVER_MARGIN = 1.1


@dataclass(frozen=True)
class ReachStep:
    t: float
    center: State
    metric: MetricPair
    radius: float
    rate: float | None  # None for the initial ball

    @property
    def ball(self) -> MetricBall:
        return MetricBall(self.center, self.radius, self.metric)


@dataclass(frozen=True)
class ReachConfig:
    system: AttitudeSystem
    initial: MetricBall
    horizon: float
    steps: int
    c_min: float = 0.0
    c_max: float = 1.0
    n_rates: int = 3
    h_max: float = H_MAX
    vertex_cap: int = VERTEX_CAP
    # bounds on A over the tube, needed only when the control law reads the attitude
    a_bound: IntervalMatrix | None = None
    shooting_radius: float = SHOOTING_RADIUS
    backend: SdpBackend | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.c_min > self.c_max:
            raise ValueError("c_min must not exceed c_max")
        if self.n_rates < 1:
            raise ValueError("n_rates must be at least 1")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class ReachResult:
    steps: list[ReachStep]
    nominal: Trajectory
    regions: list[SearchRegion]
    error: str | None = None

    @property
    def complete(self) -> bool:
        return self.error is None

    def certificates(self) -> list[Certificate]:
        """Certificate ``i`` covers ``[t_i, t_{i+1}]`` with the metric and rate stored at step ``i + 1``."""
        return [Certificate(s.metric, s.rate, reg) for s, reg in zip(self.steps[1:], self.regions)]


def product_ball(r0, omega0, r_rot: float, r_omega: float) -> MetricBall:
    """Single ball (identity metrics) containing ``{d(R, r0) <= r_rot} x {|w - omega0| <= r_omega}``."""
    if r_rot < 0.0 or r_omega < 0.0:
        raise ValueError("radii must be non-negative")
    return MetricBall(State(r0, omega0), math.hypot(r_rot, r_omega), MetricPair.identity())


# ---- tube bounds -------------------------------------------------------------


def depends_on_rotation(sys: AttitudeSystem, lo, hi, seed: int = 0) -> bool:
    """Whether the angular acceleration reads the attitude.

    Uses the law's ``depends_on_rotation`` hint when present, else probes
    ``jacobian_A`` at 8 random states in the box.
    """
    hint = getattr(sys.control_law, "depends_on_rotation", None)
    if hint is not None:
        return bool(hint)
    rng = np.random.default_rng(seed)
    for _ in range(8):
        w = rng.uniform(lo, hi)
        s = State(so3.random_rotation(rng), w)
        if np.max(np.abs(jacobian_A(sys, s))) > ROTATION_PROBE_TOL:
            return True
    return False


def _box_corners(lo, hi) -> np.ndarray:
    idx = np.array(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij")).reshape(3, -1).T
    return np.where(idx == 1, hi, lo)


def b_enclosure(sys: AttitudeSystem, lo, hi, r_ref=None) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise bounds on ``B = d w'/d w`` over the box.

    Uses the law's ``b_enclosure`` hook if present.  Otherwise takes the hull of
    finite-difference Jacobians at the box corners, which is exact whenever
    ``B`` is affine in ``w`` (true for the rigid body with any torque affine in ``w``).
    """
    hook = getattr(sys.control_law, "b_enclosure", None)
    if hook is not None:
        blo, bhi = hook(sys, np.asarray(lo), np.asarray(hi))
        return np.asarray(blo, dtype=float) - ENCLOSURE_PAD, np.asarray(bhi, dtype=float) + ENCLOSURE_PAD
    r_ref = np.eye(3) if r_ref is None else r_ref
    mats = np.array([jacobian_B(sys, State(r_ref, w)) for w in _box_corners(lo, hi)])
    # pad covers finite-difference error on top of rounding
    pad = 1e-6 * (1.0 + np.max(np.abs(mats)))
    return mats.min(axis=0) - pad, mats.max(axis=0) + pad


def rate_enclosure(sys: AttitudeSystem, lo, hi, r_ref=None) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise bounds on ``w'`` over the box.

    Prefers the law's ``rate_enclosure`` hook; otherwise uses the centered
    mean-value form ``X(w_c) + [B](box - w_c)``.
    """
    hook = getattr(sys.control_law, "rate_enclosure", None)
    if hook is not None:
        elo, ehi = hook(sys, np.asarray(lo), np.asarray(hi))
        return np.asarray(elo, dtype=float) - ENCLOSURE_PAD, np.asarray(ehi, dtype=float) + ENCLOSURE_PAD
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    r_ref = np.eye(3) if r_ref is None else r_ref
    c = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    x_c = sys.omega_dot(r_ref, c)
    blo, bhi = b_enclosure(sys, lo, hi, r_ref)
    # interval product [B] * [-rad, rad] is symmetric with half-width max|B| rad
    spread = np.maximum(np.abs(blo), np.abs(bhi)) @ rad
    return x_c - spread - ENCLOSURE_PAD, x_c + spread + ENCLOSURE_PAD


def omega_box_of_ball(ball: MetricBall) -> tuple[np.ndarray, np.ndarray]:
    """Tight axis-aligned box around the ball's projection ``{(w - w_c)^T P (w - w_c) <= r^2}``."""
    half = ball.radius * np.sqrt(np.diag(np.linalg.inv(ball.metric.p)))
    return ball.center.omega - half, ball.center.omega + half


def reach_tube(
    sys: AttitudeSystem,
    ball: MetricBall,
    t0: float,
    t1: float,
    a_bound: IntervalMatrix | None = None,
) -> SearchRegion:
    """Region containing every ``(A, B, w)`` met on ``[t0, t1]`` by trajectories starting in ``ball``.

    A candidate box ``K`` is accepted once ``box0 + [0, dt] * X(K)`` lies inside
    it, which traps all trajectories in ``K`` for the whole interval; the
    returned box is that tighter image.

    Raises:
        TubeBoundDiverged: if no self-consistent box is found in 20 inflation rounds.
        ValueError: if the law reads the attitude and ``a_bound`` or its enclosure
            hooks (which must hold over every attitude) are missing.
    """
    dt = t1 - t0
    if not 0.0 < dt <= MAX_TUBE_SPAN:
        raise ValueError(f"tube interval must have length in (0, {MAX_TUBE_SPAN}]")
    lo0, hi0 = omega_box_of_ball(ball)
    rotation_dependent = depends_on_rotation(sys, lo0, hi0)
    if rotation_dependent and a_bound is None:
        raise ValueError("control law depends on the attitude: supply a_bound for the A interval")
    if rotation_dependent and not (
        hasattr(sys.control_law, "rate_enclosure") and hasattr(sys.control_law, "b_enclosure")
    ):
        # the built-in enclosures only look at one attitude
        raise ValueError("control law depends on the attitude: it must provide rate_enclosure and b_enclosure")
    r_ref = ball.center.r

    lo, hi = lo0.copy(), hi0.copy()
    for _ in range(TUBE_ROUNDS):
        elo, ehi = rate_enclosure(sys, lo, hi, r_ref)
        cand_lo = lo0 + np.minimum(0.0, dt * elo)
        cand_hi = hi0 + np.maximum(0.0, dt * ehi)
        if np.all(cand_lo >= lo) and np.all(cand_hi <= hi):
            break
        # inflate the hull of old and candidate boxes
        hull_lo = np.minimum(lo, cand_lo)
        hull_hi = np.maximum(hi, cand_hi)
        width = hull_hi - hull_lo
        grow = TUBE_INFLATE * np.maximum(width, 1e-12)
        lo, hi = hull_lo - grow, hull_hi + grow
    else:
        raise TubeBoundDiverged(f"no self-consistent tube box on [{t0:g}, {t1:g}] after {TUBE_ROUNDS} rounds")

    blo, bhi = b_enclosure(sys, cand_lo, cand_hi, r_ref)
    a = a_bound if rotation_dependent else IntervalMatrix.point(np.zeros((3, 3)))
    b = IntervalMatrix(blo, bhi)
    if np.allclose(blo + ENCLOSURE_PAD, bhi - ENCLOSURE_PAD, rtol=0.0, atol=1e-15):
        # constant B: a single matrix keeps the vertex count to the w corners
        b = IntervalMatrix.point(0.5 * (blo + bhi))
    return SearchRegion(cand_lo, cand_hi, a, b)


# ---- main loop ---------------------------------------------------------------


def conreach(cfg: ReachConfig) -> ReachResult:
    """Run the certificate loop over ``cfg.steps`` equal intervals.

    Raises:
        NoFeasibleRate, TubeBoundDiverged: with ``step`` set and ``partial``
            holding the result computed so far.
    """
    ball = cfg.initial
    if not np.allclose(ball.metric.q, np.eye(3), atol=1e-12):
        raise ValueError("the initial ball must use the identity rotation metric")
    if ball.radius >= cfg.shooting_radius:
        raise ValueError("initial radius must lie within the shooting radius")
    times = cfg.times
    nominal = simulate(cfg.system, ball.center, times, cfg.h_max)
    steps = [ReachStep(0.0, ball.center, ball.metric, float(ball.radius), None)]
    regions: list[SearchRegion] = []

    def partial(msg: str) -> ReachResult:
        return ReachResult(list(steps), nominal, list(regions), msg)

    for i in range(cfg.steps):
        cur = steps[-1]
        t0, t1 = float(times[i]), float(times[i + 1])
        try:
            region = reach_tube(cfg.system, cur.ball, t0, t1, cfg.a_bound)
        except TubeBoundDiverged as exc:
            raise TubeBoundDiverged(str(exc), step=i, partial=partial(str(exc))) from exc
        try:
            ls = line_search(
                cur.metric.q,
                cur.metric.p,
                region,
                cfg.c_min,
                cfg.c_max,
                cfg.n_rates,
                backend=cfg.backend,
                cap=cfg.vertex_cap,
                step=i,
            )
        except NoFeasibleRate as exc:
            msg = f"step {i}: {exc}"
            raise NoFeasibleRate(msg, step=i, partial=partial(msg)) from exc
        cert = Certificate(ls.metric, ls.c, region)
        if not check_certificate(cert, cap=cfg.vertex_cap):
            raise AssertionError(f"step {i}: accepted certificate fails the independent check")
        radius = cur.radius * math.exp(ls.c * (t1 - t0))
        center = State(nominal.rotations[i + 1], nominal.omegas[i + 1])
        steps.append(ReachStep(t1, center, ls.metric, radius, ls.c))
        regions.append(region)
        log.info("step %d: c=%.4g tr(Q)=%.6g radius=%.6g", i, ls.c, np.trace(ls.metric.q), radius)
    return ReachResult(steps, nominal, regions)


# ---- covering ----------------------------------------------------------------


def cover_rotation_ball(center, radius: float, cell: float) -> list[RotationBall]:
    """Identity-metric balls on a cubic grid of pitch ``cell`` (exp coordinates at ``center``).

    A point ``center exp(v)`` with ``|v| <= radius`` has a grid point within
    ``cell * sqrt(3) / 2`` in coordinates, and the exponential map does not
    stretch distances on SO(3), so balls of that radius (times 1.1) cover.
    """
    center = so3.as_rotation(center)
    if not 0.0 < radius < math.pi / 2:
        raise ValueError("radius must lie in (0, pi/2)")
    if not 0.0 < cell <= radius:
        raise ValueError("cell must lie in (0, radius]")
    half_diag = cell * math.sqrt(3.0) / 2.0
    reach = radius + half_diag
    k = math.ceil(reach / cell)
    ax = cell * np.arange(-k, k + 1)
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid[np.linalg.norm(grid, axis=-1) <= reach]
    rots = center @ so3.exp_so3(grid)
    r_ball = half_diag * COVER_MARGIN
    return [RotationBall(r, r_ball, np.eye(3)) for r in rots]


def sample_rotation_ball(center, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples (in exp coordinates) of the identity-metric ball."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    v = d * (radius * np.cbrt(rng.uniform(size=n)))[:, None]
    return np.asarray(center) @ so3.exp_so3(v)


def coverage_fraction(center, radius: float, balls: list[RotationBall], n: int = 10_000, seed: int = 0) -> float:
    """Fraction of ``n`` samples of the input ball lying in at least one cover ball."""
    rng = np.random.default_rng(seed)
    pts = sample_rotation_ball(center, radius, n, rng)
    centers = np.array([b.center for b in balls])
    radii = np.array([b.radius for b in balls])
    covered = np.zeros(n, dtype=bool)
    for c, r in zip(centers, radii):
        covered |= so3.rotation_angle(c.T @ pts) <= r
    return float(covered.mean())


# ---- Monte-Carlo audit -------------------------------------------------------


def sample_ball(ball: MetricBall, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform samples of a ball whose rotation metric is a multiple of the identity.

    With ``Q = qI`` the ball is the image of a 6-dimensional Euclidean ball:
    ``R = R_c exp(v / sqrt(q))`` and ``w = w_c + P^{-1/2} u`` with ``|(v, u)| <= r``.
    """
    if not is_isotropic(ball.metric.q):
        raise ValueError("sampling needs an isotropic rotation metric")
    qs = math.sqrt(np.trace(ball.metric.q) / 3.0)
    x = rng.normal(size=(n, 6))
    x /= np.linalg.norm(x, axis=-1, keepdims=True)
    x *= (ball.radius * rng.uniform(size=n) ** (1.0 / 6.0))[:, None]
    lam, vec = np.linalg.eigh(ball.metric.p)
    p_isqrt = (vec / np.sqrt(lam)) @ vec.T
    rots = ball.center.r @ so3.exp_so3(x[:, :3] / qs)
    omegas = ball.center.omega + x[:, 3:] @ p_isqrt.T
    return rots, omegas


class Verdict(enum.Enum):
    SAFE = "SAFE"
    UNKNOWN = "UNKNOWN"


@dataclass
class StepAudit:
    t: float
    violations: int = 0
    worst_margin: float = math.inf
    shooting_failures: int = 0


@dataclass
class VerifyReport:
    n: int
    violations: int = 0
    worst_margin: float = math.inf
    shooting_failures: int = 0
    per_step: list[StepAudit] = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(x):
            return None if not math.isfinite(x) else x

        return {
            "n": self.n,
            "violations": self.violations,
            "worst_margin": num(self.worst_margin),
            "shooting_failures": self.shooting_failures,
            "per_step": [
                {
                    "t": s.t,
                    "violations": s.violations,
                    "worst_margin": num(s.worst_margin),
                    "shooting_failures": s.shooting_failures,
                }
                for s in self.per_step
            ],
        }


def containment_margins(
    step: ReachStep, rots: np.ndarray, omegas: np.ndarray, shooting_radius: float = SHOOTING_RADIUS
) -> tuple[np.ndarray, np.ndarray]:
    """``radius - distance`` for each state, plus a mask of states whose distance could not be certified.

    States cleared by the cheap upper bound on ``d_Q`` get the (conservative)
    margin from that bound; the rest are resolved by geodesic shooting.
    """
    q = step.metric.q
    dp = p_distance(step.metric.p, omegas, step.center.omega)
    lo, hi = q_distance_bounds(q, step.center.r, rots)
    ub = np.sqrt(hi**2 + dp**2)
    margin = step.radius - ub
    failed = np.zeros(len(rots), dtype=bool)
    if is_isotropic(q):
        return margin, failed
    todo = np.flatnonzero(margin < 0.0)
    if todo.size:
        ang = so3.rotation_angle(step.center.r.T @ rots[todo])
        ok = ang <= shooting_radius
        failed[todo[~ok]] = True
        idx = todo[ok]
        if idx.size:
            sol = shoot(q, step.center.r, rots[idx])
            good = sol.converged & (sol.distance <= hi[idx] + 1e-6)
            failed[idx[~good]] = True
            d = np.sqrt(sol.distance**2 + dp[idx] ** 2)
            margin[idx] = np.where(good, step.radius - d, margin[idx])
    return margin, failed


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("ATTREACH_THREADS", "1")))
    except ValueError:
        return 1


def monte_carlo_verify(cfg: ReachConfig, result: ReachResult, n: int, seed: int = 0) -> VerifyReport:
    """Simulate ``n`` samples of the initial ball and check containment at every step time.

    A sample violates a step when its product distance exceeds the radius by
    more than ``1e-7``.  Shooting failures are counted per sample and are not
    treated as violations.
    """
    report = VerifyReport(n, per_step=[StepAudit(s.t) for s in result.steps])
    if n <= 0:
        report.per_step = []
        return report
    rng = np.random.default_rng(seed)
    rots0, omegas0 = sample_ball(cfg.initial, n, rng)
    times = np.array([s.t for s in result.steps])
    threads = _thread_count()
    chunks = np.array_split(np.arange(n), min(threads, n))

    def run(idx):
        return simulate_batch(cfg.system, rots0[idx], omegas0[idx], times, cfg.h_max)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(idx) for idx in chunks]
    rs = np.concatenate([p[0] for p in parts], axis=1)
    ws = np.concatenate([p[1] for p in parts], axis=1)

    for k, st in enumerate(result.steps):
        margin, failed = containment_margins(st, rs[k], ws[k], cfg.shooting_radius)
        ok = ~failed
        audit = report.per_step[k]
        audit.violations = int(np.count_nonzero(ok & (margin < -CONTAIN_TOL)))
        audit.shooting_failures = int(np.count_nonzero(failed))
        if np.any(ok):
            audit.worst_margin = float(margin[ok].min())
    report.violations = sum(a.violations for a in report.per_step)
    report.shooting_failures = sum(a.shooting_failures for a in report.per_step)
    report.worst_margin = min((a.worst_margin for a in report.per_step), default=math.inf)
    return report


def tube_samples(
    cfg: ReachConfig, t0: float, t1: float, n: int, seed: int = 0
) -> np.ndarray:
    """Angular velocities at every integrator substep of ``[t0, t1]`` for ``n`` samples of the initial ball."""
    rng = np.random.default_rng(seed)
    rots, omegas = sample_ball(cfg.initial, n, rng)
    if t0 > 0.0:
        rs, ws = simulate_batch(cfg.system, rots, omegas, [0.0, t0], cfg.h_max)
        rots, omegas = rs[-1], ws[-1]
    _, _, dense = simulate_dense(cfg.system, rots, omegas, t0, t1, cfg.h_max)
    return dense.reshape(-1, 3)


def scaled(result: ReachResult, factor: float) -> ReachResult:
    """Copy of ``result`` with every radius multiplied by ``factor``."""
    return replace(result, steps=[replace(s, radius=s.radius * factor) for s in result.steps])


# ---- avoid checks ------------------------------------------------------------


def _box_p_distance(p: np.ndarray, center: np.ndarray, lo, hi) -> float:
    """``min ||x - center||_P`` over the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.all(center >= lo) and np.all(center <= hi):
        return 0.0
    lt = np.linalg.cholesky(p).T
    sol = lsq_linear(lt, lt @ center, bounds=(lo, hi), tol=1e-12, lsmr_tol="auto")
    return float(np.linalg.norm(lt @ (sol.x - center)))


def check_avoid(
    result: ReachResult,
    omega_unsafe: tuple | None = None,
    rotation_unsafe: RotationBall | None = None,
) -> list[Verdict]:
    """Per-step verdict on whether the reach ball misses the unsafe set.

    The unsafe set is ``{(R, w) : R in rotation_unsafe and w in omega_unsafe}``;
    a missing factor means "any value".  A step is SAFE when lower bounds on
    the two distance components already put every unsafe state outside the
    ball, UNKNOWN otherwise.  UNSAFE is never reported, since an
    over-approximation cannot witness a violation.
    """
    out = []
    for st in result.steps:
        lb_p = 0.0
        if omega_unsafe is not None:
            lo, hi = omega_unsafe
            lb_p = max(0.0, _box_p_distance(st.metric.p, st.center.omega, lo, hi) - 1e-9)
        lb_q = 0.0
        if rotation_unsafe is not None:
            q = st.metric.q
            lo_c, _ = q_distance_bounds(q, st.center.r, rotation_unsafe.center)
            lam_max = np.linalg.eigvalsh(q)[-1]
            lam_u = np.linalg.eigvalsh(rotation_unsafe.q)[0]
            spread = rotation_unsafe.radius * math.sqrt(lam_max / lam_u)
            lb_q = max(0.0, float(lo_c) - spread - 1e-9)
        safe = lb_p * lb_p + lb_q * lb_q > st.radius * st.radius
        out.append(Verdict.SAFE if safe else Verdict.UNKNOWN)
    return out

"""Per-step metric synthesis and the contraction-rate line search.

For a fixed rate ``c`` the step problem maximizes ``tr(Q)`` over symmetric
``Q, P`` subject to ``eps I <= Q <= Q_prev``, ``eps I <= P <= P_prev`` and the
contraction LMI at every region vertex.  The optimizer is pluggable; whatever
it returns is re-checked here with plain eigenvalue decompositions before it
is reported feasible.
"""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import so3
from .contraction import NSD_TOL, VERTEX_CAP, Certificate, SearchRegion, build_lmi
from .errors import NoFeasibleRate, SolverFailure
from .metrics import MetricPair, as_spd

log = logging.getLogger(__name__)

SPD_FLOOR = 1e-9
LMI_MARGIN = 1e-7
RESIDUAL_TOL = 1e-7
STAGNATION_TOL = 1e-5


@dataclass(frozen=True)
class StepProblem:
    q_prev: np.ndarray
    p_prev: np.ndarray
    c: float
    vertices: list  # of (A, B, w^) triples

    def __post_init__(self):
        if not self.vertices:
            raise ValueError("a step problem needs at least one vertex")


@dataclass(frozen=True)
class StepSolution:
    feasible: bool
    metric: MetricPair | None
    objective: float
    status: str = ""
    diagnostics: dict = field(default_factory=dict)


class SdpBackend(Protocol):
    def __call__(self, problem: StepProblem) -> tuple[np.ndarray | None, np.ndarray | None, str]:
        """Return ``(Q, P, status)``; status is one of "optimal", "infeasible", "stagnated"."""


class CvxpyBackend:
    """Interior-point solve through cvxpy (CLARABEL by default).

    The vertex LMIs are imposed with a small negative margin so that rounding
    in the returned iterate does not break the independent NSD check.
    """

    def __init__(self, solver: str = "CLARABEL", margin: float = LMI_MARGIN, **solver_opts):
        self.solver = solver
        self.margin = margin
        self.solver_opts = solver_opts

    def __call__(self, problem: StepProblem):
        import cvxpy as cp

        q = cp.Variable((3, 3), symmetric=True)
        p = cp.Variable((3, 3), symmetric=True)
        eye3 = np.eye(3)
        cons = [
            q >> SPD_FLOOR * eye3,
            p >> SPD_FLOOR * eye3,
            problem.q_prev - q >> 0,
            problem.p_prev - p >> 0,
        ]
        c = problem.c
        for a, b, wh in problem.vertices:
            top = wh @ q - q @ wh - 2.0 * c * q
            off = q + a.T @ p
            bot = b.T @ p + p @ b - 2.0 * c * p
            blk = cp.bmat([[top, off], [off.T, bot]])
            # blk is symmetric by construction; cvxpy wants that stated explicitly
            cons.append(0.5 * (blk + blk.T) << -self.margin * np.eye(6))
        prob = cp.Problem(cp.Maximize(cp.trace(q)), cons)
        try:
            with warnings.catch_warnings():
                # inaccurate solutions are caught by the independent re-check
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=self.solver, **self.solver_opts)
        except (KeyboardInterrupt, SystemExit):
            raise
        except BaseException as exc:  # noqa: BLE001 - native solvers can surface Rust panics
            raise SolverFailure(f"{self.solver} broke down: {exc}") from exc
        status = prob.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return None, None, "infeasible"
        if q.value is None or p.value is None:
            return None, None, "stagnated"
        if status == cp.OPTIMAL:
            return q.value, p.value, "optimal"
        return q.value, p.value, "stagnated"


_default_backend: SdpBackend | None = None


def default_backend() -> SdpBackend:
    global _default_backend
    if _default_backend is None:
        _default_backend = CvxpyBackend()
    return _default_backend


def formulate(q_prev, p_prev, c: float, region: SearchRegion, cap: int = VERTEX_CAP) -> StepProblem:
    """Step problem for rate ``c`` over ``region``; one LMI per region vertex."""
    verts = [(a, b, so3.hat(w)) for a, b, w in region.vertices(cap)]
    return StepProblem(as_spd(q_prev, "Q_prev"), as_spd(p_prev, "P_prev"), float(c), verts)


def _lmi_from_hat(m: MetricPair, c: float, a, b, wh) -> np.ndarray:
    return build_lmi(m, c, a, b, so3.vee(wh))


def constraint_violations(problem: StepProblem, q: np.ndarray, p: np.ndarray) -> dict:
    """Largest violation of each constraint family, measured by eigenvalues (positive = violated)."""
    q = 0.5 * (q + q.T)
    p = 0.5 * (p + p.T)
    out = {
        "q_floor": float(SPD_FLOOR - np.linalg.eigvalsh(q)[0]),
        "p_floor": float(SPD_FLOOR - np.linalg.eigvalsh(p)[0]),
        "q_cap": float(np.linalg.eigvalsh(q - problem.q_prev)[-1]),
        "p_cap": float(np.linalg.eigvalsh(p - problem.p_prev)[-1]),
    }
    try:
        m = MetricPair(q, p)
    except ValueError:
        out["lmi"] = float("inf")
        return out
    mats = np.array([_lmi_from_hat(m, problem.c, a, b, wh) for a, b, wh in problem.vertices])
    out["lmi"] = float(np.linalg.eigvalsh(mats)[:, -1].max())
    return out


def _repair(problem: StepProblem, q: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # shift down by the cap overshoot so that Q <= Q_prev, P <= P_prev hold to rounding
    q = 0.5 * (q + q.T)
    p = 0.5 * (p + p.T)
    dq = np.linalg.eigvalsh(q - problem.q_prev)[-1]
    dp = np.linalg.eigvalsh(p - problem.p_prev)[-1]
    if dq > 0.0:
        q = q - dq * np.eye(3)
    if dp > 0.0:
        p = p - dp * np.eye(3)
    return q, p


def solve(problem: StepProblem, backend: SdpBackend | None = None) -> StepSolution:
    """Solve a step problem and verify the answer independently.

    A backend answer counts as feasible only when every constraint holds:
    floors and caps to ``1e-7``, Loewner caps to ``1e-10`` after repair, and
    every vertex LMI with maximum eigenvalue ``<= 1e-8``.

    Raises:
        SolverFailure: on numerical breakdown inside the backend.
    """
    if problem.c <= 0.0:
        # w^Q - Q w^ is traceless, so the rotation block has trace -2c tr(Q) >= 0
        # and cannot sit below -margin * I
        return StepSolution(
            False, None, float("nan"), "infeasible", {"reason": "trace obstruction: rate must be positive"}
        )
    backend = backend or default_backend()
    q, p, status = backend(problem)
    if status == "infeasible" or q is None:
        return StepSolution(False, None, float("nan"), "infeasible", {"reason": "backend reported infeasible"})
    q, p = _repair(problem, np.asarray(q, dtype=float), np.asarray(p, dtype=float))
    viol = constraint_violations(problem, q, p)
    ok = (
        viol["q_floor"] <= RESIDUAL_TOL
        and viol["p_floor"] <= RESIDUAL_TOL
        and viol["q_cap"] <= 1e-10
        and viol["p_cap"] <= 1e-10
        and viol["lmi"] <= NSD_TOL
    )
    if not ok:
        worst = max(viol.values())
        reason = "stagnated" if worst > STAGNATION_TOL else "verification failed"
        return StepSolution(False, None, float("nan"), reason, {"violations": viol, "backend_status": status})
    try:
        metric = MetricPair(q, p)
    except ValueError as exc:
        return StepSolution(False, None, float("nan"), "verification failed", {"reason": str(exc)})
    return StepSolution(True, metric, float(np.trace(q)), status, {"violations": viol})


@dataclass(frozen=True)
class LineSearchResult:
    c: float
    metric: MetricPair
    solution: StepSolution
    trials: list  # (c, feasible) in the order tried


def rate_grid(c_min: float, c_max: float, n_steps: int) -> list[float]:
    """Descending grid ``c_max - j (c_max - c_min) / n_steps``, ``j = 0..n_steps``."""
    if c_min > c_max:
        raise ValueError("c_min must not exceed c_max")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    grid = [c_max - j * (c_max - c_min) / n_steps for j in range(n_steps)]
    return grid + [float(c_min)]


def line_search(
    q_prev,
    p_prev,
    region: SearchRegion,
    c_min: float,
    c_max: float,
    n_steps: int,
    backend: SdpBackend | None = None,
    cap: int = VERTEX_CAP,
    step: int | None = None,
) -> LineSearchResult:
    """Walk the rate grid downward, keeping the last feasible point and stopping at the first infeasible one.

    Raises:
        NoFeasibleRate: if ``c_max`` itself is infeasible.
    """
    best = None
    trials = []
    for c in rate_grid(c_min, c_max, n_steps):
        sol = solve(formulate(q_prev, p_prev, c, region, cap), backend)
        trials.append((c, sol.feasible))
        log.debug("rate %.6g: %s (%s)", c, "feasible" if sol.feasible else "infeasible", sol.status)
        if not sol.feasible:
            break
        best = (c, sol)
    if best is None:
        raise NoFeasibleRate(f"no feasible contraction rate at or below c_max = {c_max}", step=step)
    c, sol = best
    return LineSearchResult(c, sol.metric, sol, trials)


def certificate_from(result: LineSearchResult, region: SearchRegion) -> Certificate:
    return Certificate(result.metric, result.c, region)


def dump_problem(problem: StepProblem, label: str = "") -> str:
    """Plain-text listing of a step problem: scalars, then each symmetric matrix row by row."""
    buf = io.StringIO()

    def mat(name, m):
        buf.write(f"{name}\n")
        for row in np.asarray(m):
            buf.write(" ".join(f"{x:.17g}" for x in row) + "\n")

    buf.write(f"# step problem {label}".rstrip() + "\n")
    buf.write(f"c {problem.c:.17g}\n")
    buf.write(f"vertices {len(problem.vertices)}\n")
    mat("Q_prev", problem.q_prev)
    mat("P_prev", problem.p_prev)
    for k, (a, b, wh) in enumerate(problem.vertices):
        mat(f"vertex {k} A", a)
        mat(f"vertex {k} B", b)
        mat(f"vertex {k} W", wh)
    return buf.getvalue()

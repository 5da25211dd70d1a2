"""Exponential-coordinate charts on SO(3) and Euclidean pictures of metric balls.

Four charts ``Psi_i(R) = log(L_i R)`` with ``L_i = diag(s_i)`` cover SO(3).
A left-invariant metric ball is the time-one image of the ellipsoid
``{w0 : w0^T Q w0 <= r^2}`` under the geodesic flow, so mapping geodesic
endpoints through a chart gives a point cloud of the ball in R^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import BallStraddlesCharts, ChartBoundaryHit, OutOfRange, OutsideChartDomain
from .metrics import (
    GEODESIC_STEP,
    SHOOTING_RADIUS,
    as_spd,
    geodesic_endpoint,
    is_isotropic,
    reduced_geodesic_rhs,
)

CHART_SIGNS = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
DOMAIN_TOL = 1e-9
COVERAGE_MARGIN = 1e-6
# distance kept from the chart's cut sphere |r| = pi
BOUNDARY_GAP = 0.05

__all__ = [
    "ExpChart",
    "ChartPoint",
    "GeodesicState",
    "chart_map",
    "chart_inverse",
    "chart_coverage",
    "best_chart",
    "reduced_geodesic_rhs",
    "chart_velocity_factor",
    "chart_geodesic_step",
    "chart_geodesic_flow",
    "fibonacci_sphere",
    "ball_points",
    "ball_boundary",
    "ball_interior_samples",
    "points_array",
]


@dataclass(frozen=True)
class ExpChart:
    index: int

    def __post_init__(self):
        if self.index not in (0, 1, 2, 3):
            raise ValueError("chart index must be 0, 1, 2 or 3")

    @property
    def s(self) -> np.ndarray:
        return CHART_SIGNS[self.index].copy()

    @property
    def lam(self) -> np.ndarray:
        return np.diag(CHART_SIGNS[self.index])


@dataclass(frozen=True)
class ChartPoint:
    chart: int
    r: np.ndarray


@dataclass(frozen=True)
class GeodesicState:
    r: np.ndarray  # chart coordinates
    w: np.ndarray  # reduced velocity


def _as_chart(chart) -> ExpChart:
    return chart if isinstance(chart, ExpChart) else ExpChart(int(chart))


def chart_map(chart, r) -> np.ndarray:
    """Chart coordinates ``log(L R)`` of rotation(s) ``r``.

    Raises:
        OutsideChartDomain: if ``trace(L R) <= -1 + 1e-9``.
    """
    lam = _as_chart(chart).lam
    lr = lam @ np.asarray(r, dtype=float)
    if np.any(np.trace(lr, axis1=-2, axis2=-1) <= -1.0 + DOMAIN_TOL):
        raise OutsideChartDomain(f"rotation lies outside the domain of chart {_as_chart(chart).index}")
    return so3.log_so3(lr)


def chart_inverse(chart, v) -> np.ndarray:
    """``L exp(v^)``; raises OutOfRange unless ``|v| < pi``."""
    v = np.asarray(v, dtype=float)
    if np.any(np.linalg.norm(v, axis=-1) >= math.pi):
        raise OutOfRange("chart coordinates must satisfy |r| < pi")
    return _as_chart(chart).lam @ so3.exp_so3(v)


def _trace_margins(r) -> np.ndarray:
    # trace(diag(s) R) + 1 for every chart
    d = np.diagonal(np.asarray(r, dtype=float), axis1=-2, axis2=-1)
    return d @ CHART_SIGNS.T + 1.0


def chart_coverage(r) -> list[int]:
    """Charts whose domain contains ``r`` with trace margin ``1e-6``."""
    m = _trace_margins(r)
    return [i for i in range(4) if m[i] > COVERAGE_MARGIN]


def best_chart(r) -> ExpChart:
    """Chart in which ``r`` sits deepest (largest trace margin)."""
    return ExpChart(int(np.argmax(_trace_margins(r))))


def chart_velocity_factor(r) -> np.ndarray:
    """Matrix ``f(r)`` with ``r' = f(r) w`` for chart coordinates of a curve with body velocity ``w``."""
    r = np.asarray(r, dtype=float)
    if np.any(np.linalg.norm(r, axis=-1) >= math.pi):
        raise OutOfRange("chart coordinates must satisfy |r| < pi")
    return so3.dexpinv(r)


def _chart_rhs(q, q_inv, r, w):
    if np.any(np.linalg.norm(r, axis=-1) >= math.pi - BOUNDARY_GAP):
        raise ChartBoundaryHit(f"chart coordinates came within {BOUNDARY_GAP} of the cut sphere")
    return so3.dexpinv_apply(r, w), reduced_geodesic_rhs(q, w, q_inv)


def chart_geodesic_step(chart, q, gs: GeodesicState, h: float, q_inv=None) -> GeodesicState:
    """Classical RK4 step of ``r' = f(r) w``, ``w' = -Q^{-1}(w x Q w)`` in chart coordinates.

    The equations are the same in every chart because the chart offsets are
    constant left factors; ``chart`` is validated but does not enter the step.

    Raises:
        ChartBoundaryHit: if a stage gets within 0.05 of ``|r| = pi``.
    """
    _as_chart(chart)
    q = np.asarray(q, dtype=float)
    if q_inv is None:
        q_inv = np.linalg.inv(q)
    r, w = np.asarray(gs.r, dtype=float), np.asarray(gs.w, dtype=float)
    a1, b1 = _chart_rhs(q, q_inv, r, w)
    a2, b2 = _chart_rhs(q, q_inv, r + 0.5 * h * a1, w + 0.5 * h * b1)
    a3, b3 = _chart_rhs(q, q_inv, r + 0.5 * h * a2, w + 0.5 * h * b2)
    a4, b4 = _chart_rhs(q, q_inv, r + h * a3, w + h * b3)
    r_next = r + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    w_next = w + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    if np.any(np.linalg.norm(r_next, axis=-1) >= math.pi - BOUNDARY_GAP):
        raise ChartBoundaryHit(f"chart coordinates came within {BOUNDARY_GAP} of the cut sphere")
    return GeodesicState(r_next, w_next)


def chart_geodesic_flow(chart, q, r0, w0, t: float = 1.0, h: float = GEODESIC_STEP) -> GeodesicState:
    """Repeated :func:`chart_geodesic_step` from ``(r0, w0)`` to time ``t``."""
    q = as_spd(q, "Q")
    q_inv = np.linalg.inv(q)
    n = max(1, math.ceil(t / h - 1e-9))
    gs = GeodesicState(np.array(r0, dtype=float), np.array(w0, dtype=float))
    for _ in range(n):
        gs = chart_geodesic_step(chart, q, gs, t / n, q_inv)
    return gs


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` quasi-uniform unit vectors (golden-angle spiral)."""
    if n <= 0:
        return np.zeros((0, 3))
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * np.arange(n)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def _inv_sqrt(q: np.ndarray) -> np.ndarray:
    lam, v = np.linalg.eigh(q)
    return (v / np.sqrt(lam)) @ v.T


def ball_points(
    q,
    center,
    w0,
    chart=None,
    shooting_radius: float = SHOOTING_RADIUS,
    h: float = GEODESIC_STEP,
) -> list[ChartPoint]:
    """Chart images of time-one geodesic endpoints from ``center`` with reduced velocities ``w0``.

    Raises:
        BallStraddlesCharts: if an endpoint falls outside the chart or within 0.05 of its cut sphere.
        ValueError: if an endpoint is farther than ``shooting_radius`` (bi-invariant angle) from
            ``center`` for anisotropic ``Q``, where distances can no longer be certified by shooting.
    """
    q = as_spd(q, "Q")
    center = so3.as_rotation(center)
    w0 = np.asarray(w0, dtype=float).reshape(-1, 3)
    ch = best_chart(center) if chart is None else _as_chart(chart)
    if w0.shape[0] == 0:
        return []
    ends = geodesic_endpoint(q, center, w0, 1.0, h)
    try:
        coords = chart_map(ch, ends)
    except OutsideChartDomain as exc:
        raise BallStraddlesCharts(f"ball leaves the domain of chart {ch.index}") from exc
    if np.any(np.linalg.norm(coords, axis=-1) >= math.pi - BOUNDARY_GAP):
        raise BallStraddlesCharts(f"ball reaches the cut sphere of chart {ch.index}")
    if not is_isotropic(q):
        ang = so3.rotation_angle(center.T @ ends)
        if np.any(ang > shooting_radius):
            raise ValueError(f"ball extends {np.max(ang):.4g} rad from its center, beyond the shooting radius")
    return [ChartPoint(ch.index, c) for c in coords]


def ball_boundary(q, center, radius: float, n: int, chart=None, **kw) -> list[ChartPoint]:
    """``n`` points on the boundary sphere of the ``Q``-ball, in one exp chart."""
    q = as_spd(q, "Q")
    if radius < 0.0:
        raise ValueError("radius must be non-negative")
    w0 = radius * fibonacci_sphere(n) @ _inv_sqrt(q).T
    return ball_points(q, center, w0, chart, **kw)


def interior_fractions(n: int) -> np.ndarray:
    """Radial fractions ``cbrt(u)`` with ``u`` a golden-ratio sequence, giving volume-uniform fill."""
    u = ((np.arange(n) + 0.5) * (math.sqrt(5.0) - 1.0) / 2.0) % 1.0
    return np.cbrt(u)


def ball_interior_samples(q, center, radius: float, n: int, chart=None, **kw) -> list[ChartPoint]:
    """``n`` points strictly inside the ``Q``-ball, in one exp chart."""
    q = as_spd(q, "Q")
    if radius < 0.0:
        raise ValueError("radius must be non-negative")
    w0 = radius * interior_fractions(n)[:, None] * fibonacci_sphere(n) @ _inv_sqrt(q).T
    return ball_points(q, center, w0, chart, **kw)


def points_array(points: list[ChartPoint]) -> np.ndarray:
    return np.array([p.r for p in points], dtype=float).reshape(-1, 3)

"""Attitude dynamics ``R' = R w^``, ``J w' = -w x J w + tau(R, w)`` and a Lie-group integrator.

Control laws are callables ``tau(r, omega)`` that broadcast over leading axes
(``r`` is ``(..., 3, 3)``, ``omega`` is ``(..., 3)``).  Wrap a scalar-only
function with :func:`pointwise`.  Laws may also carry optional hints used by
the reachability code:

* ``depends_on_rotation``: ``False`` when torque ignores ``R``.
* ``rate_enclosure(system, lo, hi)``: entrywise bounds on ``w'`` over a box (and, for laws
  that read ``R``, over every attitude).
* ``b_enclosure(system, lo, hi)``: entrywise bounds on ``d w'/d w`` over a box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import so3
from .metrics import State

H_MAX = 1e-3
MAX_STEP = 0.05


class ZeroTorque:
    """Free rigid body."""

    depends_on_rotation = False

    def __call__(self, r, omega):
        return np.zeros(np.shape(omega))


@dataclass(frozen=True)
class LinearRateLaw:
    """Torque ``tau = J K w + w x J w`` that makes the closed loop ``w' = K w``.

    With ``K = J`` this is the damping law of the worked example in the README.
    """

    inertia: np.ndarray
    gain: np.ndarray

    depends_on_rotation = False

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.array(self.inertia, dtype=float).reshape(3, 3))
        object.__setattr__(self, "gain", np.array(self.gain, dtype=float).reshape(3, 3))

    def __call__(self, r, omega):
        omega = np.asarray(omega, dtype=float)
        jw = omega @ self.inertia.T
        return omega @ (self.inertia @ self.gain).T + so3.cross(omega, jw)

    def rate_enclosure(self, system, lo, hi):
        # exact image of the box under w -> K w
        c = 0.5 * (lo + hi)
        rad = 0.5 * (hi - lo)
        mid = self.gain @ c
        spread = np.abs(self.gain) @ rad
        return mid - spread, mid + spread

    def b_enclosure(self, system, lo, hi):
        return self.gain.copy(), self.gain.copy()


def damping_law(inertia) -> LinearRateLaw:
    """``tau = J^2 w + w x J w``, giving ``w' = J w``."""
    j = np.array(inertia, dtype=float).reshape(3, 3)
    return LinearRateLaw(j, j)


def pointwise(fn: Callable, depends_on_rotation: bool | None = None) -> Callable:
    """Lift a single-state law ``fn(R, w) -> tau`` to batched inputs by looping."""

    def law(r, omega):
        r = np.asarray(r, dtype=float)
        omega = np.asarray(omega, dtype=float)
        flat_r = r.reshape(-1, 3, 3)
        flat_w = omega.reshape(-1, 3)
        out = np.array([fn(a, b) for a, b in zip(flat_r, flat_w)], dtype=float)
        return out.reshape(omega.shape)

    law.depends_on_rotation = depends_on_rotation
    return law


@dataclass(frozen=True)
class AttitudeSystem:
    inertia: np.ndarray
    control_law: Callable

    def __post_init__(self):
        j = np.array(self.inertia, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(j)) or abs(np.linalg.det(j)) <= 1e-9:
            raise ValueError("inertia must be finite and invertible")
        object.__setattr__(self, "inertia", j)
        object.__setattr__(self, "_inertia_inv", np.linalg.inv(j))

    @property
    def inertia_inv(self) -> np.ndarray:
        return self._inertia_inv

    def omega_dot(self, r, omega) -> np.ndarray:
        """Angular acceleration, batched."""
        omega = np.asarray(omega, dtype=float)
        tau = np.asarray(self.control_law(r, omega), dtype=float)
        return (tau - so3.cross(omega, omega @ self.inertia.T)) @ self._inertia_inv.T


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (K,)
    rotations: np.ndarray  # (K, 3, 3)
    omegas: np.ndarray  # (K, 3)

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0.0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def states(self) -> list[State]:
        return [State(r, w) for r, w in zip(self.rotations, self.omegas)]

    def __len__(self) -> int:
        return len(self.times)


def vector_field(sys: AttitudeSystem, s: State) -> tuple[np.ndarray, np.ndarray]:
    """Tangent ``(R w^, w')`` at ``s``."""
    return s.r @ so3.hat(s.omega), sys.omega_dot(s.r, s.omega)


def _rkmk4(sys: AttitudeSystem, r: np.ndarray, w: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    v1 = sys.omega_dot(r, w)
    w2 = w + 0.5 * h * v1
    r2 = r @ so3.exp_so3(0.5 * h * w)
    u2 = so3.dexpinv_apply(0.5 * h * w, w2)
    v2 = sys.omega_dot(r2, w2)
    w3 = w + 0.5 * h * v2
    r3 = r @ so3.exp_so3(0.5 * h * u2)
    u3 = so3.dexpinv_apply(0.5 * h * u2, w3)
    v3 = sys.omega_dot(r3, w3)
    w4 = w + h * v3
    r4 = r @ so3.exp_so3(h * u3)
    u4 = so3.dexpinv_apply(h * u3, w4)
    v4 = sys.omega_dot(r4, w4)
    r_next = r @ so3.exp_so3(h / 6.0 * (w + 2.0 * u2 + 2.0 * u3 + u4))
    w_next = w + h / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
    return so3.polar_refine(r_next), w_next


def step_arrays(sys: AttitudeSystem, r, w, h: float) -> tuple[np.ndarray, np.ndarray]:
    """One RKMK4 step on batched arrays."""
    if not 0.0 < h <= MAX_STEP:
        raise ValueError(f"step size must lie in (0, {MAX_STEP}]")
    return _rkmk4(sys, np.asarray(r, dtype=float), np.asarray(w, dtype=float), h)


def step(sys: AttitudeSystem, s: State, h: float) -> State:
    r, w = step_arrays(sys, s.r, s.omega, h)
    return State(r, w)


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size == 0 or t[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("time grid must be strictly increasing")
    return t


def simulate_batch(sys: AttitudeSystem, r0, w0, t_grid, h_max: float = H_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch of initial states and sample at ``t_grid``.

    Args:
        r0: ``(B, 3, 3)`` initial attitudes.
        w0: ``(B, 3)`` initial angular velocities.

    Returns:
        ``(rotations (K, B, 3, 3), omegas (K, B, 3))``.
    """
    t = _check_grid(t_grid)
    r = np.array(r0, dtype=float)
    w = np.array(w0, dtype=float)
    rs = np.empty((t.size,) + r.shape)
    ws = np.empty((t.size,) + w.shape)
    rs[0], ws[0] = r, w
    for k in range(1, t.size):
        span = t[k] - t[k - 1]
        n = max(1, math.ceil(span / h_max - 1e-9))
        h = span / n
        for _ in range(n):
            r, w = step_arrays(sys, r, w, h)
        rs[k], ws[k] = r, w
    return rs, ws


def simulate_dense(sys: AttitudeSystem, r0, w0, t0: float, t1: float, h_max: float = H_MAX):
    """Batch states at every internal substep of ``[t0, t1]``, endpoints included."""
    n = max(1, math.ceil((t1 - t0) / h_max - 1e-9))
    h = (t1 - t0) / n
    r = np.array(r0, dtype=float)
    w = np.array(w0, dtype=float)
    out_w = [w]
    for _ in range(n):
        r, w = step_arrays(sys, r, w, h)
        out_w.append(w)
    return r, w, np.stack(out_w)


def simulate(sys: AttitudeSystem, s0: State, t_grid, h_max: float = H_MAX) -> Trajectory:
    t = _check_grid(t_grid)
    rs, ws = simulate_batch(sys, s0.r[None], s0.omega[None], t, h_max)
    return Trajectory(t, rs[:, 0], ws[:, 0])

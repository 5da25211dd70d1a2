"""Contraction certificates for the attitude system.

A certificate ``(Q, P, c)`` over a region of states asks that the 6x6 matrix

    [[w^Q - Q w^ - 2cQ,  Q + A^T P],
     [Q + P A,           B^T P + P B - 2cP]]

be negative semidefinite wherever ``(A, B, w)`` can occur.  ``A`` and ``B`` are
the derivatives of the angular acceleration along the group and along ``w``.
The matrix is affine in ``(A, B, w^)``, so checking the corners of an interval
box is enough.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import so3
from .dynamics import AttitudeSystem
from .errors import TooManyVertices
from .metrics import MetricPair, State

FD_STEP = 1e-6
NSD_TOL = 1e-8
VERTEX_CAP = 2**15


@dataclass(frozen=True)
class IntervalMatrix:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(3, 3)
        hi = np.array(self.upper, dtype=float).reshape(3, 3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("interval bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, m) -> IntervalMatrix:
        m = np.asarray(m, dtype=float)
        return cls(m, m)

    @property
    def varying(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(3) for j in range(3) if self.upper[i, j] > self.lower[i, j]]

    def contains(self, m, tol: float = 0.0) -> bool:
        m = np.asarray(m, dtype=float)
        return bool(np.all(m >= self.lower - tol) and np.all(m <= self.upper + tol))

    def vertices(self) -> list[np.ndarray]:
        free = self.varying
        out = []
        for bits in itertools.product((0, 1), repeat=len(free)):
            m = self.lower.copy()
            for (i, j), b in zip(free, bits):
                if b:
                    m[i, j] = self.upper[i, j]
            out.append(m)
        return out


@dataclass(frozen=True)
class SearchRegion:
    """Box of angular velocities plus interval enclosures of ``A`` and ``B`` over it."""

    omega_lo: np.ndarray
    omega_hi: np.ndarray
    a: IntervalMatrix
    b: IntervalMatrix

    def __post_init__(self):
        lo = np.array(self.omega_lo, dtype=float).reshape(3)
        hi = np.array(self.omega_hi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("omega box must be finite")
        if np.any(lo > hi):
            raise ValueError("omega box lower bound exceeds upper bound")
        object.__setattr__(self, "omega_lo", lo)
        object.__setattr__(self, "omega_hi", hi)

    @property
    def omega_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.omega_lo, self.omega_hi

    def omega_vertices(self) -> list[np.ndarray]:
        free = [k for k in range(3) if self.omega_hi[k] > self.omega_lo[k]]
        out = []
        for bits in itertools.product((0, 1), repeat=len(free)):
            w = self.omega_lo.copy()
            for k, b in zip(free, bits):
                if b:
                    w[k] = self.omega_hi[k]
            out.append(w)
        return out

    def vertex_count(self) -> int:
        n_free = len(self.a.varying) + len(self.b.varying)
        n_free += int(np.count_nonzero(self.omega_hi > self.omega_lo))
        return 2**n_free

    def vertices(self, cap: int = VERTEX_CAP) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """All ``(A, B, w)`` corner combinations; widths of zero add no corners."""
        count = self.vertex_count()
        if count > cap:
            raise TooManyVertices(f"region has {count} vertices, above the cap of {cap}")
        return [
            (a, b, w)
            for a in self.a.vertices()
            for b in self.b.vertices()
            for w in self.omega_vertices()
        ]


@dataclass(frozen=True)
class Certificate:
    metric: MetricPair
    rate: float
    region: SearchRegion


def _law_hook(sys: AttitudeSystem, name: str):
    return getattr(sys.control_law, name, None)


def jacobian_A(sys: AttitudeSystem, s: State, step: float = FD_STEP) -> np.ndarray:
    """Derivative of the angular acceleration along left-invariant directions ``R e_k^``.

    Central differences in the algebra unless the law provides ``jacobian_a(system, r, omega)``.
    """
    hook = _law_hook(sys, "jacobian_a")
    if hook is not None:
        return np.asarray(hook(sys, s.r, s.omega), dtype=float)
    e = np.eye(3) * step
    plus = s.r @ so3.exp_so3(e)
    minus = s.r @ so3.exp_so3(-e)
    w = np.broadcast_to(s.omega, (3, 3))
    diff = sys.omega_dot(plus, w) - sys.omega_dot(minus, w)
    return diff.T / (2.0 * step)


def jacobian_B(sys: AttitudeSystem, s: State, step: float = FD_STEP) -> np.ndarray:
    """``d w'/d w`` by central differences unless the law provides ``jacobian_b(system, r, omega)``."""
    hook = _law_hook(sys, "jacobian_b")
    if hook is not None:
        return np.asarray(hook(sys, s.r, s.omega), dtype=float)
    e = np.eye(3) * step
    r = np.broadcast_to(s.r, (3, 3, 3))
    diff = sys.omega_dot(r, s.omega + e) - sys.omega_dot(r, s.omega - e)
    return diff.T / (2.0 * step)


def build_lmi(m: MetricPair, c: float, a, b, omega) -> np.ndarray:
    """Assemble the 6x6 contraction matrix; exactly symmetric on return."""
    q, p = m.q, m.p
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wh = so3.hat(omega)
    out = np.empty((6, 6))
    out[:3, :3] = wh @ q - q @ wh - 2.0 * c * q
    out[:3, 3:] = q + a.T @ p
    out[3:, :3] = q + p @ a
    out[3:, 3:] = b.T @ p + p @ b - 2.0 * c * p
    return 0.5 * (out + out.T)


def vertex_max_eigs(cert: Certificate, cap: int = VERTEX_CAP) -> np.ndarray:
    """Largest eigenvalue of the contraction matrix at each region vertex."""
    mats = np.array([build_lmi(cert.metric, cert.rate, a, b, w) for a, b, w in cert.region.vertices(cap)])
    return np.linalg.eigvalsh(mats)[:, -1]


def check_certificate(cert: Certificate, tol: float = NSD_TOL, cap: int = VERTEX_CAP) -> bool:
    """True iff the contraction matrix is NSD (max eigenvalue ``<= tol``) at every vertex.

    Raises:
        TooManyVertices: if the region has more than ``cap`` corners.
    """
    return bool(np.all(vertex_max_eigs(cert, cap) <= tol))


def eta_coefficients(q, i: int, j: int) -> np.ndarray:
    """Components ``<nabla_{L_i} L_j, L_l>_Q`` for ``l = 1, 2, 3`` (indices are 1-based)."""
    if i not in (1, 2, 3) or j not in (1, 2, 3):
        raise ValueError("indices must be 1, 2 or 3")
    q = np.asarray(q, dtype=float)
    q11, q22, q33 = q[0, 0], q[1, 1], q[2, 2]
    q12, q13, q23 = q[0, 1], q[0, 2], q[1, 2]
    table = {
        (1, 1): (0.0, -q13, q12),
        (1, 2): (q13, 0.0, (-q11 + q22 + q33) / 2),
        (1, 3): (-q12, (q11 - q22 - q33) / 2, 0.0),
        (2, 1): (0.0, -q23, (-q11 + q22 - q33) / 2),
        (2, 2): (q23, 0.0, -q12),
        (2, 3): ((q11 - q22 + q33) / 2, q12, 0.0),
        (3, 1): (0.0, (q11 + q22 - q33) / 2, q23),
        (3, 2): ((-q11 - q22 + q33) / 2, 0.0, -q13),
        (3, 3): (-q23, q13, 0.0),
    }
    return np.array(table[(i, j)], dtype=float)


def covariant_identity_residual(q, alpha, omega) -> float:
    """Norm of ``sum_ij a_i w_j Q^-1 eta_ij - (Q^-1 w^ Q a - tr(Q)/2 Q^-1 w^ a)``."""
    q = np.asarray(q, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    omega = np.asarray(omega, dtype=float)
    acc = np.zeros(3)
    for i in range(1, 4):
        for j in range(1, 4):
            acc += alpha[i - 1] * omega[j - 1] * eta_coefficients(q, i, j)
    wh = so3.hat(omega)
    closed = wh @ q @ alpha - 0.5 * np.trace(q) * wh @ alpha
    # subtract before applying Q^-1 so the residual does not pick up cond(Q)
    return float(np.linalg.norm(np.linalg.solve(q, acc - closed)))

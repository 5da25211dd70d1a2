"""Compiled inner loops for reduced geodesic integration.

Scalar transcriptions of the formulas in :mod:`attreach.so3`; the numpy
versions remain the reference and the tests compare the two.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SMALL_ANGLE = 1e-4
SERIES_ANGLE = 0.05


@njit(cache=True)
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def _dexpinv_apply(x0, x1, x2, w0, w1, w2):
    t2 = x0 * x0 + x1 * x1 + x2 * x2
    t = math.sqrt(t2)
    if t < SERIES_ANGLE:
        g = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0
    else:
        g = 1.0 / t2 - 0.5 / (t * math.tan(0.5 * t))
    c0, c1, c2 = _cross(x0, x1, x2, w0, w1, w2)
    d0, d1, d2 = _cross(x0, x1, x2, c0, c1, c2)
    return w0 + 0.5 * c0 + g * d0, w1 + 0.5 * c1 + g * d1, w2 + 0.5 * c2 + g * d2


@njit(cache=True)
def _exp(v0, v1, v2, out):
    t2 = v0 * v0 + v1 * v1 + v2 * v2
    t = math.sqrt(t2)
    if t < SMALL_ANGLE:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = math.sin(t) / t
        s = math.sin(0.5 * t)
        b = 2.0 * s * s / t2
    out[0, 0] = 1.0 - b * (v1 * v1 + v2 * v2)
    out[1, 1] = 1.0 - b * (v0 * v0 + v2 * v2)
    out[2, 2] = 1.0 - b * (v0 * v0 + v1 * v1)
    out[0, 1] = -a * v2 + b * v0 * v1
    out[1, 0] = a * v2 + b * v0 * v1
    out[0, 2] = a * v1 + b * v0 * v2
    out[2, 0] = -a * v1 + b * v0 * v2
    out[1, 2] = -a * v0 + b * v1 * v2
    out[2, 1] = a * v0 + b * v1 * v2


@njit(cache=True)
def _rhs(q, qi, w0, w1, w2):
    m0 = q[0, 0] * w0 + q[0, 1] * w1 + q[0, 2] * w2
    m1 = q[1, 0] * w0 + q[1, 1] * w1 + q[1, 2] * w2
    m2 = q[2, 0] * w0 + q[2, 1] * w1 + q[2, 2] * w2
    c0, c1, c2 = _cross(w0, w1, w2, m0, m1, m2)
    return (
        -(qi[0, 0] * c0 + qi[0, 1] * c1 + qi[0, 2] * c2),
        -(qi[1, 0] * c0 + qi[1, 1] * c1 + qi[1, 2] * c2),
        -(qi[2, 0] * c0 + qi[2, 1] * c1 + qi[2, 2] * c2),
    )


@njit(cache=True)
def geodesic_flow(q, qi, r0, w0, dt, n):
    """RKMK4 for ``R' = R w^, w' = -Q^{-1}(w x Q w)``; ``r0`` is (B,3,3), ``w0`` is (B,3)."""
    nb = w0.shape[0]
    r_out = np.empty((nb, 3, 3))
    w_out = np.empty((nb, 3))
    e = np.empty((3, 3))
    tmp = np.empty((3, 3))
    h2 = 0.5 * dt
    h6 = dt / 6.0
    for b in range(nb):
        r = r0[b].copy()
        x0, x1, x2 = w0[b, 0], w0[b, 1], w0[b, 2]
        for _ in range(n):
            k10, k11, k12 = _rhs(q, qi, x0, x1, x2)
            a0, a1, a2 = x0 + h2 * k10, x1 + h2 * k11, x2 + h2 * k12
            k20, k21, k22 = _rhs(q, qi, a0, a1, a2)
            b0, b1, b2 = x0 + h2 * k20, x1 + h2 * k21, x2 + h2 * k22
            k30, k31, k32 = _rhs(q, qi, b0, b1, b2)
            c0, c1, c2 = x0 + dt * k30, x1 + dt * k31, x2 + dt * k32
            k40, k41, k42 = _rhs(q, qi, c0, c1, c2)
            u20, u21, u22 = _dexpinv_apply(h2 * x0, h2 * x1, h2 * x2, a0, a1, a2)
            u30, u31, u32 = _dexpinv_apply(h2 * u20, h2 * u21, h2 * u22, b0, b1, b2)
            u40, u41, u42 = _dexpinv_apply(dt * u30, dt * u31, dt * u32, c0, c1, c2)
            _exp(
                h6 * (x0 + 2.0 * u20 + 2.0 * u30 + u40),
                h6 * (x1 + 2.0 * u21 + 2.0 * u31 + u41),
                h6 * (x2 + 2.0 * u22 + 2.0 * u32 + u42),
                e,
            )
            for i in range(3):
                for j in range(3):
                    tmp[i, j] = r[i, 0] * e[0, j] + r[i, 1] * e[1, j] + r[i, 2] * e[2, j]
            r[:, :] = tmp
            x0 += h6 * (k10 + 2.0 * k20 + 2.0 * k30 + k40)
            x1 += h6 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
            x2 += h6 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
        r_out[b] = r
        w_out[b, 0] = x0
        w_out[b, 1] = x1
        w_out[b, 2] = x2
    return r_out, w_out

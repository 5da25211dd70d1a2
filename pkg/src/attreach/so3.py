"""SO(3) and so(3) primitives.

Every function broadcasts over leading axes: vectors are ``(..., 3)`` and
matrices ``(..., 3, 3)``.  Rotations are plain ``numpy`` arrays; use
:func:`as_rotation` at API boundaries to validate them.
"""

from __future__ import annotations

import numpy as np

from .errors import AngleAtPi, NotSkew, TooFarFromGroup

# Below this angle the Rodrigues coefficients switch to Taylor series.
SMALL_ANGLE = 1e-4
ROTATION_TOL = 1e-9
PI_TOL = 1e-9
# Series cutoff for coefficients whose closed forms cancel catastrophically.
SERIES_ANGLE = 0.05

_I3 = np.eye(3)


def hat(v) -> np.ndarray:
    """Map ``v`` in R^3 to the skew matrix with ``hat(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises:
        NotSkew: if ``||m + m^T||_F > tol`` for any matrix in the batch.
    """
    m = np.asarray(m, dtype=float)
    asym = np.linalg.norm(m + np.swapaxes(m, -1, -2), axis=(-2, -1))
    if np.any(asym > tol):
        raise NotSkew(f"matrix is not skew-symmetric (||m + m^T||_F = {np.max(asym):.3e})")
    return _vee_skew_part(m)


def _vee_skew_part(m: np.ndarray) -> np.ndarray:
    # vee of (m - m^T)/2, no checking
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def cross(a, b) -> np.ndarray:
    """Cross product along the last axis (faster than ``np.cross`` for small batches)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def _rodrigues_coefficients(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``sin(t)/t`` and ``(1 - cos t)/t^2`` with a series branch near zero."""
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    half = np.sin(0.5 * safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 2.0 * half * half / (safe * safe))
    return a, b


def exp_so3(v) -> np.ndarray:
    """Rodrigues exponential ``exp(hat(v))``."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    a, b = _rodrigues_coefficients(theta)
    k = hat(v)
    return _I3 + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rotation_angle(r) -> np.ndarray:
    """Rotation angle in ``[0, pi]``, computed with ``atan2`` for accuracy at both ends."""
    r = np.asarray(r, dtype=float)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    s = np.linalg.norm(_vee_skew_part(r), axis=-1)
    return np.arctan2(s, c)


def log_so3(r) -> np.ndarray:
    """Principal logarithm, returned as a rotation vector with norm below pi.

    Raises:
        AngleAtPi: if ``trace(r) <= -1 + 1e-9`` for any matrix in the batch.
    """
    r = np.asarray(r, dtype=float)
    tr = np.trace(r, axis1=-2, axis2=-1)
    if np.any(tr <= -1.0 + PI_TOL):
        raise AngleAtPi("rotation angle is pi; logarithm is not unique")
    c = 0.5 * (tr - 1.0)
    s_vec = _vee_skew_part(r)
    s = np.linalg.norm(s_vec, axis=-1)
    theta = np.arctan2(s, c)

    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe_s = np.where(s > 0.0, s, 1.0)
    scale = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / safe_s)
    out = scale[..., None] * s_vec

    # near pi, theta/sin(theta) amplifies rounding; read the axis off the symmetric part
    wide = c < -0.5
    if np.any(wide):
        rw = r[wide]
        cw = c[wide]
        sym = 0.5 * (rw + np.swapaxes(rw, -1, -2)) - cw[:, None, None] * _I3
        diag = np.diagonal(sym, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        idx = np.arange(rw.shape[0])
        col = sym[idx, :, k]
        axis = col / np.sqrt(diag[idx, k] * (1.0 - cw))[:, None]
        sign = np.where(np.sum(axis * s_vec[wide], axis=-1) < 0.0, -1.0, 1.0)
        out[wide] = (sign * theta[wide])[:, None] * axis
    return out


def bi_invariant_distance(r1, r2) -> np.ndarray | float:
    """Bi-invariant distance ``||log(r1^T r2)||``.

    Saturates at pi for antipodal pairs instead of raising.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    d = rotation_angle(np.swapaxes(r1, -1, -2) @ r2)
    return float(d) if np.ndim(d) == 0 else d


def reorthonormalize(m, max_distance: float = 0.1) -> np.ndarray:
    """Nearest rotation in Frobenius norm (special polar factor).

    Raises:
        TooFarFromGroup: if the input is farther than ``max_distance`` from SO(3).
    """
    m = np.asarray(m, dtype=float)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0.0, 1.0, d)
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    r = u @ vt
    dist = np.linalg.norm(r - m, axis=(-2, -1))
    if np.any(dist > max_distance):
        raise TooFarFromGroup(f"matrix is {np.max(dist):.3g} from SO(3) (limit {max_distance})")
    return r


def polar_refine(m) -> np.ndarray:
    """Reorthonormalize a matrix that is already close to SO(3).

    One Newton-Schulz step ``m (3I - m^T m) / 2`` squares the orthogonality
    defect, which suffices for integrator drift.  Falls back to
    :func:`reorthonormalize` when the defect exceeds 1e-6.
    """
    m = np.asarray(m, dtype=float)
    gram = np.swapaxes(m, -1, -2) @ m
    if np.max(np.abs(gram - _I3)) > 1e-6:
        return reorthonormalize(m)
    return m @ (1.5 * _I3 - 0.5 * gram)


def is_rotation(m, tol: float = ROTATION_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3) or not np.all(np.isfinite(m)):
        return False
    ortho = np.linalg.norm(np.swapaxes(m, -1, -2) @ m - _I3, axis=(-2, -1))
    det = np.linalg.det(m)
    return bool(np.all(ortho <= tol) and np.all(np.abs(det - 1.0) <= tol))


def as_rotation(m, tol: float = ROTATION_TOL) -> np.ndarray:
    """Validate and return ``m`` as a float rotation array."""
    arr = np.array(m, dtype=float)
    if not is_rotation(arr, tol):
        raise ValueError("matrix is not a rotation (orthonormality or determinant check failed)")
    return arr


def dexpinv_coefficient(theta: np.ndarray) -> np.ndarray:
    """Coefficient ``g`` in ``dexpinv(x) = I + x^/2 + g x^^2`` with ``theta = ||x||``."""
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    # closed form loses ~eps/theta^2 to cancellation, so the series runs further out
    small = theta < SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    closed = 1.0 / (safe * safe) - 0.5 / (safe * np.tan(0.5 * safe))
    series = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2**3 / 1209600.0
    return np.where(small, series, closed)


def dexpinv(x) -> np.ndarray:
    """Matrix ``f(x)`` mapping body velocity to exponential-coordinate velocity.

    If ``R(t) = R0 exp(hat(x(t)))`` then ``x' = dexpinv(x) @ w`` where ``w`` is the
    body angular velocity of ``R``.
    """
    x = np.asarray(x, dtype=float)
    g = dexpinv_coefficient(np.linalg.norm(x, axis=-1))
    k = hat(x)
    return _I3 + 0.5 * k + g[..., None, None] * (k @ k)


def dexpinv_apply(x, w) -> np.ndarray:
    """``dexpinv(x) @ w`` without forming matrices."""
    x = np.asarray(x, dtype=float)
    g = dexpinv_coefficient(np.linalg.norm(x, axis=-1))
    xw = cross(x, w)
    return w + 0.5 * xw + g[..., None] * cross(x, xw)


def dexp(x) -> np.ndarray:
    """Inverse of :func:`dexpinv`: ``I + (cos t - 1)/t^2 x^ + (t - sin t)/t^3 x^^2``."""
    x = np.asarray(x, dtype=float)
    t = np.linalg.norm(x, axis=-1)
    t2 = t * t
    small = t < SERIES_ANGLE
    safe = np.where(small, 1.0, t)
    half = np.sin(0.5 * safe)
    a = np.where(small, -0.5 + t2 / 24.0 - t2 * t2 / 720.0 + t2**3 / 40320.0, -2.0 * half * half / (safe * safe))
    b = np.where(
        small,
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0,
        (safe - np.sin(safe)) / safe**3,
    )
    k = hat(x)
    return _I3 + a[..., None, None] * k + b[..., None, None] * (k @ k)


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-uniform rotations via normalized quaternions."""
    shape = (4,) if size is None else (size, 4)
    q = rng.normal(size=shape)
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )
    return r

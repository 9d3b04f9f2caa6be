"""SO(3) / so(3) primitives.

All functions accept a single element or a stack of them along leading axes:
vectors are ``(..., 3)`` and matrices ``(..., 3, 3)``.
"""
from __future__ import annotations

import numpy as np

# Below this angle exp/log switch to Taylor series.
SMALL_ANGLE = 1e-4
# Below this value of sin(theta) with cos(theta) < 0, log uses the symmetric-part
# axis extraction instead of the skew part.
NEAR_PI_SIN = 1e-4

SKEW_TOL = 1e-9


def hat(v) -> np.ndarray:
    """Cross-product matrix: ``hat(v) @ w == np.cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m) -> np.ndarray:
    """Inverse of :func:`hat`. Raises ``ValueError`` for non-skew input."""
    m = np.asarray(m, dtype=float)
    asym = np.abs(m + np.swapaxes(m, -1, -2)).max() if m.size else 0.0
    if asym > SKEW_TOL:
        raise ValueError(f"matrix is not skew-symmetric (|m + m^T|_max = {asym:.3e})")
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _skew_part_vee(m: np.ndarray) -> np.ndarray:
    # vee((m - m^T) / 2) without the skew check
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def _sinc_coeffs(theta: np.ndarray):
    """Return ``sin(t)/t`` and ``(1 - cos(t))/t**2`` with series near zero."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    return a, b


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula: rotation by ``|phi|`` about ``phi / |phi|``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _sinc_coeffs(theta)
    K = hat(phi)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def _canonical_sign(axis: np.ndarray) -> np.ndarray:
    # first component with non-negligible magnitude made positive
    idx = np.argmax(np.abs(axis) > 1e-12, axis=-1)
    lead = np.take_along_axis(axis, idx[..., None], axis=-1)
    return np.where(lead < 0, -axis, axis)


def log_so3(R) -> np.ndarray:
    """Principal-branch logarithm; the result has norm in ``[0, pi]``.

    At exactly ``pi`` the axis sign is ambiguous; the first nonzero component
    of the returned vector is made positive.
    """
    R = np.asarray(R, dtype=float)
    w = _skew_part_vee(R)  # sin(theta) * axis
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < SMALL_ANGLE
    t2 = theta * theta
    safe_s = np.where(s > 0.0, s, 1.0)
    factor = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / safe_s)
    out = factor[..., None] * w

    near_pi = (c < 0.0) & (s < NEAR_PI_SIN)
    if np.any(near_pi):
        Rn = R[near_pi]
        cn = c[near_pi]
        # (R + R^T)/2 = cos(t) I + (1 - cos(t)) a a^T
        aat = (0.5 * (Rn + np.swapaxes(Rn, -1, -2)) - cn[:, None, None] * np.eye(3)) / (1.0 - cn)[
            :, None, None
        ]
        k = np.argmax(np.diagonal(aat, axis1=-2, axis2=-1), axis=-1)
        col = aat[np.arange(len(k)), :, k]
        axis = col / np.linalg.norm(col, axis=-1, keepdims=True)
        wn = w[near_pi]
        proj = np.einsum("...i,...i->...", axis, wn)
        decided = np.abs(proj) > 1e-14
        axis = np.where(
            decided[:, None], np.where(proj[:, None] < 0, -axis, axis), _canonical_sign(axis)
        )
        out[near_pi] = theta[near_pi][:, None] * axis
    return out


def adjoint_of(R) -> np.ndarray:
    """Matrix of ``Ad_R`` acting on algebra vectors. On SO(3) this is ``R``."""
    return np.array(R, dtype=float, copy=True)


def ad_of(phi) -> np.ndarray:
    """Matrix of ``ad_phi`` (bracket with ``phi``). On so(3) this is ``hat(phi)``."""
    return hat(phi)


def group_error(R_d, R) -> np.ndarray:
    """Left configuration error ``R_d^{-1} R``."""
    return np.swapaxes(np.asarray(R_d, dtype=float), -1, -2) @ np.asarray(R, dtype=float)


def error_angle(R_d, R):
    """Geodesic angle between two rotations, in ``[0, pi]``."""
    return np.linalg.norm(log_so3(group_error(R_d, R)), axis=-1)


def project_to_so3(M) -> np.ndarray:
    """Nearest rotation in Frobenius norm (polar factor via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.ones(U.shape[:-1])
    D[..., -1] = d
    return (U * D[..., None, :]) @ Vt


def is_rotation(R, tol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3) or not np.all(np.isfinite(R)):
        return False
    defect = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))
    return bool(np.all(defect <= tol) and np.all(np.abs(np.linalg.det(R) - 1.0) <= tol))


def check_rotation(R, name: str = "rotation", tol: float = 1e-10) -> np.ndarray:
    """Validate at a construction boundary; returns the matrix as a float array."""
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol):
        raise ValueError(f"{name} is not a valid rotation matrix (tol {tol:g})")
    return R

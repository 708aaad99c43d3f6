"""SO(3) helpers: skew operator, exponential/logarithm maps, re-orthonormalization.

Rotations are plain ``(3, 3)`` float arrays and rotation vectors are ``(3,)``
arrays. Everything here is stateless.
"""

from __future__ import annotations

import math

import numpy as np

# below this angle the Rodrigues coefficients are replaced by their Taylor series
SMALL_ANGLE = 1e-7
# distance from pi under which the log map reports a sign ambiguity
PI_AMBIGUITY = 1e-7
ORTHONORMAL_TOL = 1e-9


class NotARotationError(ValueError):
    """Raised when a matrix is too far from SO(3) to be treated as a rotation."""


def skew(a) -> np.ndarray:
    """Return the matrix ``S`` with ``S @ b == cross(a, b)``."""
    x, y, z = float(a[0]), float(a[1]), float(a[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors; much cheaper than ``np.cross`` for
    single vectors."""
    a0, a1, a2 = float(a[0]), float(a[1]), float(a[2])
    b0, b1, b2 = float(b[0]), float(b[1]), float(b[2])
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def _det3(R) -> float:
    return float(
        R[0, 0] * (R[1, 1] * R[2, 2] - R[1, 2] * R[2, 1])
        - R[0, 1] * (R[1, 0] * R[2, 2] - R[1, 2] * R[2, 0])
        + R[0, 2] * (R[1, 0] * R[2, 1] - R[1, 1] * R[2, 0])
    )


_EYE3 = np.eye(3)


def vee(S: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (uses the antisymmetric part only)."""
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def exp_map(v) -> np.ndarray:
    """Rodrigues formula: rotation vector (rad) to rotation matrix."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    theta2 = x * x + y * y + z * z
    theta = math.sqrt(theta2)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    # I + a*K + b*K^2, with K^2 = v v^T - theta^2 I
    return np.array(
        [
            [1.0 - b * (y * y + z * z), b * x * y - a * z, b * x * z + a * y],
            [b * x * y + a * z, 1.0 - b * (x * x + z * z), b * y * z - a * x],
            [b * x * z - a * y, b * y * z + a * x, 1.0 - b * (x * x + y * y)],
        ]
    )


def orthonormality_error(R: np.ndarray) -> float:
    """Frobenius norm of ``R^T R - I``."""
    E = R.T @ R - _EYE3
    return math.sqrt(float((E * E).sum()))


def is_rotation(R, tol: float = ORTHONORMAL_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return orthonormality_error(R) <= tol and abs(_det3(R) - 1.0) <= tol


def _canonical_half_turn(k: np.ndarray) -> np.ndarray:
    # first nonzero component positive
    for c in k:
        if abs(c) > 1e-12:
            return k if c > 0 else -k
    return k


def log_map(R, *, with_flag: bool = False, tol: float = 1e-6):
    """Rotation matrix to rotation vector with angle in ``[0, pi]``.

    At (numerically) a half turn both ``v`` and ``-v`` are valid; the
    representative whose first nonzero component is positive is returned and,
    when ``with_flag`` is set, the second return value is ``True``.

    Raises :class:`NotARotationError` if ``R`` is farther than ``tol`` from
    SO(3).
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise NotARotationError(f"expected a 3x3 matrix, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise NotARotationError("matrix has non-finite entries")
    if orthonormality_error(R) > tol or _det3(R) <= 0.0:
        raise NotARotationError("matrix is not orthonormal with det +1")

    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * math.sqrt(float(w @ w))  # sin(theta)
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)  # cos(theta)
    theta = math.atan2(s, c)

    ambiguous = False
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        v = 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * w
    elif theta < math.pi - 1e-3:
        v = (theta / (2.0 * s)) * w
    else:
        # near a half turn: the axis comes from the symmetric part
        B = 0.5 * (R + R.T) - c * np.eye(3)  # = (1 - cos) k k^T
        i = int(np.argmax(np.diag(B)))
        k = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
        k /= np.linalg.norm(k)
        if math.pi - theta < PI_AMBIGUITY:
            ambiguous = True
            k = _canonical_half_turn(k)
        elif k @ w < 0.0:
            k = -k
        v = theta * k
    if with_flag:
        return v, ambiguous
    return v


def reorthonormalize(R, max_error: float = 0.1) -> np.ndarray:
    """Nearest rotation matrix (orthogonal polar factor) of a near-rotation.

    Uses the Newton-Schulz iteration, which converges to the polar factor for
    ``||R^T R - I|| < 1``; inputs beyond ``max_error`` are refused.
    """
    R = np.array(R, dtype=float)
    E = R.T @ R - _EYE3
    err = math.sqrt(float((E * E).sum()))
    if err >= max_error:
        raise NotARotationError(f"||R^T R - I|| = {err:.3g} exceeds {max_error}")
    if _det3(R) <= 0.0:
        raise NotARotationError("determinant is not positive")
    for _ in range(20):
        if err < 1e-15:
            break
        R = R @ (_EYE3 - 0.5 * E)
        E = R.T @ R - _EYE3
        err = float(np.abs(E).max())
    return R


def euler_zyx(R: np.ndarray) -> np.ndarray:
    """(roll, pitch, yaw) in radians for ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def rot_x(angle: float) -> np.ndarray:
    return exp_map((angle, 0.0, 0.0))


def rot_z(angle: float) -> np.ndarray:
    return exp_map((0.0, 0.0, angle))

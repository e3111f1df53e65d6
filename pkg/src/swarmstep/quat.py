"""Quaternion and 3-vector math over single values and columnar batches.

Quaternions are Hamilton convention, scalar-first ``(w, x, y, z)``, and encode
the body-to-inertial rotation.  ``q`` and ``-q`` denote the same rotation;
``canonical`` picks the representative with ``w >= 0``.  Canonicalization is
applied only at serialization boundaries, never inside integration.

Every function accepts either a single quaternion of shape ``(4,)`` (vector
``(3,)``) or a batch of shape ``(n, 4)`` (``(n, 3)``); the batch dimension is
preserved.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidStateError

__all__ = [
    "quat_identity",
    "quat_normalize",
    "quat_canonical",
    "quat_conj",
    "quat_mul",
    "quat_rotate",
    "quat_from_axis_angle",
    "yaw_quat",
    "quat_yaw",
]

_UNIT_TOL = 1e-6


def quat_identity(n: int | None = None) -> np.ndarray:
    """Identity quaternion, or a batch of ``n`` identities."""
    if n is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return q


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Rescale to unit norm.  Zero-norm input raises ``InvalidStateError``."""
    q = np.asarray(q, dtype=float)
    norm = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    if not np.all(norm > 0.0):
        raise InvalidStateError("cannot normalize zero quaternion")
    return q / norm


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so that w >= 0 (double-cover representative).

    Negative zeros from the flip are normalized so serialized bytes are clean.
    """
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign + 0.0


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidStateError("non-finite quaternion input")


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``, renormalized.

    Operands are expected unit within 1e-6; the product is renormalized so a
    chain of calls keeps |norm - 1| <= 1e-9.  Non-finite input raises
    ``InvalidStateError``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_finite(a, b)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = aw * bw - ax * bx - ay * by - az * bz
    out[..., 1] = aw * bx + ax * bw + ay * bz - az * by
    out[..., 2] = aw * by - ax * bz + ay * bw + az * bx
    out[..., 3] = aw * bz + ax * by - ay * bx + az * bw
    return quat_normalize(out)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` from body to inertial frame: ``R(q) @ v``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_finite(q, v)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    # Rows of the standard rotation matrix R(q), applied component-wise.
    out = np.empty(np.broadcast(q[..., :3], v).shape)
    out[..., 0] = (
        (1.0 - 2.0 * (y * y + z * z)) * vx
        + 2.0 * (x * y - w * z) * vy
        + 2.0 * (x * z + w * y) * vz
    )
    out[..., 1] = (
        2.0 * (x * y + w * z) * vx
        + (1.0 - 2.0 * (x * x + z * z)) * vy
        + 2.0 * (y * z - w * x) * vz
    )
    out[..., 2] = (
        2.0 * (x * z - w * y) * vx
        + 2.0 * (y * z + w * x) * vy
        + (1.0 - 2.0 * (x * x + y * y)) * vz
    )
    return out


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def yaw_quat(theta) -> np.ndarray:
    """Yaw-only quaternion(s) for heading angle(s) ``theta`` (rad)."""
    theta = np.asarray(theta, dtype=float)
    half = 0.5 * theta
    out = np.zeros(theta.shape + (4,))
    out[..., 0] = np.cos(half)
    out[..., 3] = np.sin(half)
    return out


def quat_yaw(q: np.ndarray) -> np.ndarray:
    """Heading (yaw) angle extracted from quaternion(s)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

"""Quaternion and rotation helpers for the rigid-body chain.

Quaternions are stored as (w, x, y, z) arrays and kept unit-norm by the
integrator. Hand-rolled instead of scipy.spatial.transform because these
run inside the per-step hot loop: np.cross alone costs ~35 us per call
for 3-vectors, so small cross products are written out explicitly.
"""

from __future__ import annotations

import math

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / math.sqrt(float(q @ q))


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.empty(4)
    out[0] = aw * bw - ax * bx - ay * by - az * bz
    out[1] = aw * bx + ax * bw + ay * bz - az * by
    out[2] = aw * by - ax * bz + ay * bw + az * bx
    out[3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle, rad)."""
    p0, p1, p2 = phi
    angle = math.sqrt(p0 * p0 + p1 * p1 + p2 * p2)
    out = np.empty(4)
    if angle < 1e-8:
        # series expansion keeps the map smooth through zero
        k = 0.5 - angle * angle / 48.0
        out[0] = 1.0 - 0.125 * angle * angle
    else:
        k = math.sin(0.5 * angle) / angle
        out[0] = math.cos(0.5 * angle)
    out[1] = k * p0
    out[2] = k * p1
    out[3] = k * p2
    return out / math.sqrt(float(out @ out))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - 2.0 * (yy + zz)
    out[0, 1] = 2.0 * (xy - wz)
    out[0, 2] = 2.0 * (xz + wy)
    out[1, 0] = 2.0 * (xy + wz)
    out[1, 1] = 1.0 - 2.0 * (xx + zz)
    out[1, 2] = 2.0 * (yz - wx)
    out[2, 0] = 2.0 * (xz - wy)
    out[2, 1] = 2.0 * (yz + wx)
    out[2, 2] = 1.0 - 2.0 * (xx + yy)
    return out


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion (angle wrapped to [-pi, pi])."""
    w = min(max(float(q[0]), -1.0), 1.0)
    v = q[1:]
    s = math.sqrt(float(v @ v))
    if s < 1e-12:
        return 2.0 * v if w >= 0.0 else -2.0 * v
    angle = 2.0 * math.atan2(s, w)
    if angle > math.pi:
        angle -= 2.0 * math.pi
    return (angle / s) * v


def quat_derivative(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """qdot for angular velocity expressed in the pre-rotation frame."""
    return 0.5 * quat_mul(np.array([0.0, omega[0], omega[1], omega[2]]), q)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a0, a1, a2 = a
    b0, b1, b2 = b
    out = np.empty(3)
    out[0] = a1 * b2 - a2 * b1
    out[1] = a2 * b0 - a0 * b2
    out[2] = a0 * b1 - a1 * b0
    return out


def cross_rows(r: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Column-wise cross product r x J[:, k] for a (3, n) matrix."""
    r0, r1, r2 = r
    out = np.empty_like(J)
    out[0] = r1 * J[2] - r2 * J[1]
    out[1] = r2 * J[0] - r0 * J[2]
    out[2] = r0 * J[1] - r1 * J[0]
    return out


def cross_rows_batch(r: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Batched :func:`cross_rows`: r is (B, 3), J is (B, 3, n)."""
    r0 = r[:, 0, None]
    r1 = r[:, 1, None]
    r2 = r[:, 2, None]
    out = np.empty_like(J)
    out[:, 0] = r1 * J[:, 2] - r2 * J[:, 1]
    out[:, 1] = r2 * J[:, 0] - r0 * J[:, 2]
    out[:, 2] = r0 * J[:, 1] - r1 * J[:, 0]
    return out


def cross_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product of (..., 3) arrays (np.cross without its overhead)."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


# --- batched quaternion operations (vectorized over the leading axis) ---


def quat_to_matrix_batch(Q: np.ndarray) -> np.ndarray:
    w, x, y, z = Q[:, 0], Q[:, 1], Q[:, 2], Q[:, 3]
    out = np.empty((len(Q), 3, 3))
    out[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[:, 0, 1] = 2.0 * (x * y - w * z)
    out[:, 0, 2] = 2.0 * (x * z + w * y)
    out[:, 1, 0] = 2.0 * (x * y + w * z)
    out[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[:, 1, 2] = 2.0 * (y * z - w * x)
    out[:, 2, 0] = 2.0 * (x * z - w * y)
    out[:, 2, 1] = 2.0 * (y * z + w * x)
    out[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def quat_from_rotvec_batch(phi: np.ndarray) -> np.ndarray:
    angle = np.sqrt(np.einsum("ij,ij->i", phi, phi))
    half = 0.5 * angle
    small = angle < 1e-8
    k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    out = np.empty((len(phi), 4))
    out[:, 0] = np.where(small, 1.0 - 0.125 * angle * angle, np.cos(half))
    out[:, 1:] = phi * k[:, None]
    return out / np.sqrt(np.einsum("ij,ij->i", out, out))[:, None]


def quat_mul_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = A[:, 0], A[:, 1], A[:, 2], A[:, 3]
    bw, bx, by, bz = B[:, 0], B[:, 1], B[:, 2], B[:, 3]
    out = np.empty_like(A)
    out[:, 0] = aw * bw - ax * bx - ay * by - az * bz
    out[:, 1] = aw * bx + ax * bw + ay * bz - az * by
    out[:, 2] = aw * by - ax * bz + ay * bw + az * bx
    out[:, 3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def rotvec_from_quat_batch(Q: np.ndarray) -> np.ndarray:
    w = np.clip(Q[:, 0], -1.0, 1.0)
    v = Q[:, 1:]
    s = np.sqrt(np.einsum("ij,ij->i", v, v))
    angle = 2.0 * np.arctan2(s, w)
    angle = np.where(angle > np.pi, angle - 2.0 * np.pi, angle)
    tiny = s < 1e-12
    scale = np.where(tiny, np.where(w >= 0.0, 2.0, -2.0), angle / np.where(tiny, 1.0, s))
    return v * scale[:, None]

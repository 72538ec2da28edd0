"""Rotation utilities: axis-angle, rotation matrices and unit quaternions.

Quaternions are stored (w, x, y, z).  Angular velocities are expressed in
the world frame, so the kinematic relation is q_dot = 0.5 * (0, w) * q.
"""

from __future__ import annotations

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    """Matrix S(v) with S(v) @ u == cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rot_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    c = np.cos(angle)
    s = np.sin(angle)
    k = np.asarray(axis, dtype=float)
    K = skew(k)
    return np.eye(3) * c + s * K + (1.0 - c) * np.outer(k, k)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * angle
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = np.sin(half) * axis
    return q


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Exponential map; safe near zero rotation."""
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return quat_normalize(q)
    return quat_from_axis_angle(rv / angle, angle)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_rot(q) @ np.asarray(v, dtype=float)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation between two unit quaternions."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * np.arccos(min(1.0, dot))


def quat_yaw(q: np.ndarray) -> float:
    """Rotation angle about +z for planar poses."""
    R = quat_to_rot(q)
    return float(np.arctan2(R[1, 0], R[0, 0]))


def quat_about_z(angle: float) -> np.ndarray:
    return np.array([np.cos(0.5 * angle), 0.0, 0.0, np.sin(0.5 * angle)])

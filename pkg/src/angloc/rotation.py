"""Axis-angle rotations and their derivatives."""

from __future__ import annotations

import numpy as np


def skew(w) -> np.ndarray:
    wx, wy, wz = np.asarray(w, dtype=float)
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues formula, rotation by ``|w|`` radians about ``w``."""
    w = np.asarray(w, dtype=float)
    th = np.linalg.norm(w)
    K = skew(w)
    if th < 1e-8:
        # second-order series keeps R orthonormal to ~1e-16 here
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (np.sin(th) / th) * K + ((1 - np.cos(th)) / th**2) * K @ K


def log_so3(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)
    th = np.arccos(c)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-8:
        return v / 2
    if np.pi - th < 1e-6:
        # near pi the antisymmetric part vanishes; read the axis from R + I
        B = (R + np.eye(3)) / 2
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / np.sqrt(max(B[i, i], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, v) < 0:
            axis = -axis
        return th * axis
    return th / (2 * np.sin(th)) * v


def rotation_angle(R1, R2) -> float:
    """Geodesic distance between two rotations (radians)."""
    return float(np.linalg.norm(log_so3(np.asarray(R1).T @ np.asarray(R2))))


def d_exp_so3(w) -> np.ndarray:
    """Derivatives dR/dw_i, shape (3, 3, 3) with index i first.

    Uses dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2, falling back to
    [e_i]x at the origin.
    """
    w = np.asarray(w, dtype=float)
    th2 = float(w @ w)
    if th2 < 1e-16:
        return np.array([skew(e) for e in np.eye(3)])
    R = exp_so3(w)
    K = skew(w)
    I_R = np.eye(3) - R
    return np.array([(w[i] * K + skew(np.cross(w, I_R[:, i]))) @ R / th2 for i in range(3)])


def random_rotation(rng) -> np.ndarray:
    """Uniform rotation from a normalised Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])

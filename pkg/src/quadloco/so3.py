"""Small SO(3) helpers shared across the stack.

All rotations are plain 3x3 numpy arrays. Conventions:
  - ``R`` maps body/base-frame vectors into the world frame.
  - Angular velocities passed around the package are world-frame unless a
    function says otherwise.
"""

from __future__ import annotations

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    """Matrix S(v) such that S(v) @ w == v x w."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vex(m: np.ndarray) -> np.ndarray:
    """Inverse of skew for a (possibly only approximately) skew matrix."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def rot_x(q: float) -> np.ndarray:
    c, s = np.cos(q), np.sin(q)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(q: float) -> np.ndarray:
    c, s = np.cos(q), np.sin(q)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(q: float) -> np.ndarray:
    c, s = np.cos(q), np.sin(q)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Cardan roll-pitch-yaw (x-y-z) convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Matrix exponential of skew(w) via Rodrigues' formula."""
    th = float(np.linalg.norm(w))
    if th < 1e-12:
        return np.eye(3) + skew(w)
    a = w / th
    s = skew(a)
    return np.eye(3) + np.sin(th) * s + (1.0 - np.cos(th)) * (s @ s)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R. Stable near the identity and up to pi."""
    c = float(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0))
    th = float(np.arccos(c))
    if th < 1e-9:
        return vex(R)
    if th > np.pi - 1e-6:
        # near pi: extract axis from R + I
        a = np.sqrt(np.maximum(np.diag(R) + 1.0, 0.0) / 2.0)
        k = int(np.argmax(a))
        axis = np.zeros(3)
        axis[k] = a[k]
        for j in range(3):
            if j != k:
                axis[j] = (R[k, j] + R[j, k]) / (4.0 * a[k])
        axis /= np.linalg.norm(axis)
        # fix the sign using the skew part (vanishes exactly at pi)
        v = vex(R)
        if np.dot(v, axis) < 0.0:
            axis = -axis
        return th * axis
    return th / np.sin(th) * vex(R)


def project_to_so3(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) via SVD, det forced to +1."""
    u, _, vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(R: np.ndarray, tol: float = 1e-8) -> bool:
    return (
        R.shape == (3, 3)
        and bool(np.all(np.isfinite(R)))
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and np.linalg.det(R) > 0.0
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation from a random rotation vector."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    return exp_so3(angle * axis)

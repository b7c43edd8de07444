"""Small rotation/transform helpers used by registration and the CLI."""

import numpy as np


def rodrigues(axis_angle):
    """Axis-angle vector (3,) to rotation matrix via the Rodrigues formula."""
    w = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        # second-order expansion keeps the map smooth through zero
        K = _skew(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    k = w / theta
    K = _skew(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, radians in [0, pi]."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_between(Ra, Rb):
    """Angle separating two rotations."""
    return rotation_angle(np.asarray(Ra).T @ np.asarray(Rb))


def _skew(v):
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def fibonacci_sphere(count=64):
    """Evenly spread unit directions, used to generate candidate viewpoints.

    Deterministic golden-angle spiral; count >= 1.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    i = np.arange(count, dtype=np.float64)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    y = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    return np.stack([r * np.cos(phi), y, r * np.sin(phi)], axis=1)

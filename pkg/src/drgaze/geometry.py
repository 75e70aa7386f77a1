"""Gaze direction representations, conversions, and the angular-error metric.

Gaze directions are unit 3-vectors. The pitch/yaw convention is fixed so that
(pitch, yaw) = (0, 0) faces the camera along -z:

    v = (-cos(pitch) * sin(yaw), -sin(pitch), -cos(pitch) * cos(yaw))

Dataset label files may use a mirrored yaw sign; the loader selects between
the registered conversion conventions by name.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateOutputError

NORM_EPS = 1e-12


def unit_vector(v) -> np.ndarray:
    """Normalize to unit length, rejecting (near-)zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < NORM_EPS):
        raise DegenerateOutputError("cannot normalize a zero-norm gaze vector")
    return v / norm


def pitch_yaw_to_vector(pitch, yaw) -> np.ndarray:
    """Convert pitch/yaw angles (radians) to unit gaze vectors.

    Accepts scalars or equally shaped arrays; returns shape (..., 3).
    Pitch must lie in [-pi/2, pi/2] and yaw in [-pi, pi].
    """
    pitch = np.asarray(pitch, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    if np.any(np.abs(pitch) > np.pi / 2):
        raise ValueError("pitch outside [-pi/2, pi/2]")
    if np.any(np.abs(yaw) > np.pi):
        raise ValueError("yaw outside [-pi, pi]")
    cos_p = np.cos(pitch)
    return np.stack(
        [-cos_p * np.sin(yaw), -np.sin(pitch), -cos_p * np.cos(yaw)], axis=-1
    )


def vector_to_pitch_yaw(v) -> tuple[np.ndarray, np.ndarray]:
    """Invert :func:`pitch_yaw_to_vector`.

    Returns (pitch, yaw) arrays/scalars. At the gimbal case |y| = 1 the yaw is
    defined as 0.
    """
    v = unit_vector(v)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    pitch = -np.arcsin(np.clip(y, -1.0, 1.0))
    yaw = np.arctan2(-x, -z)
    yaw = np.where(np.abs(y) >= 1.0 - 1e-9, 0.0, yaw)
    if v.ndim == 1:
        return float(pitch), float(yaw)
    return pitch, yaw


def angular_error(g, g_hat) -> np.ndarray | float:
    """Angle between two gaze vectors, in degrees.

    Both inputs are normalized internally, so the result is invariant under
    positive rescaling. The dot product is clamped to [-1, 1] before arccos
    to prevent rounding from leaving the domain.
    """
    a = unit_vector(g)
    b = unit_vector(g_hat)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    angle = np.degrees(np.arccos(dot))
    if angle.ndim == 0:
        return float(angle)
    return angle


def _mirrored_to_vector(pitch, yaw):
    v = pitch_yaw_to_vector(pitch, yaw)
    v[..., 0] = -v[..., 0]
    return v


def _mirrored_from_vector(v):
    v = np.array(v, dtype=np.float64, copy=True)
    v[..., 0] = -v[..., 0]
    return vector_to_pitch_yaw(v)


# The label-file angle convention is dataset dependent (the yaw sign is the
# usual discrepancy); loaders pick one of these by name.
CONVENTIONS = {
    "camera": (pitch_yaw_to_vector, vector_to_pitch_yaw),
    "mirrored": (_mirrored_to_vector, _mirrored_from_vector),
}

"""Angle, vector and rotation utilities for gaze/head directions.

Convention: the camera looks along +z and image y points down. A
``Direction`` is a (pitch, yaw) pair in radians mapping to the unit vector

    v = (-cos(pitch)*sin(yaw), -sin(pitch), -cos(pitch)*cos(yaw))

so the frontal direction (0, 0) looks straight at the camera along
(0, 0, -1) and positive pitch looks up. Rotations built from directions
use the Ry(yaw) @ Rx(-pitch) composition, which makes direction-to-direction
rotations compose exactly as a group.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDirection, NonUnitInput

_HALF_PI = math.pi / 2.0
# Slack for invariant checks on values produced by asin/atan2 round-trips.
_ANGLE_EPS = 1e-12


@dataclass(frozen=True)
class Direction:
    """Gaze or head direction as a (pitch, yaw) pair in radians.

    Invariants: |pitch| <= pi/2 and yaw in (-pi, pi].
    """

    pitch: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.pitch) and math.isfinite(self.yaw)):
            raise InvalidDirection(f"non-finite direction ({self.pitch}, {self.yaw})")
        if abs(self.pitch) > _HALF_PI + _ANGLE_EPS:
            raise InvalidDirection(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        if not (-math.pi - _ANGLE_EPS < self.yaw <= math.pi + _ANGLE_EPS):
            raise InvalidDirection(f"yaw {self.yaw} outside (-pi, pi]")


FRONTAL = Direction(0.0, 0.0)


def wrap_yaw(yaw: float) -> float:
    """Wrap an arbitrary yaw angle into (-pi, pi]."""
    wrapped = math.remainder(yaw, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def unit_vector(v, tol: float = 1e-6) -> np.ndarray:
    """Validate and return ``v`` as a float64 unit 3-vector.

    Raises NonUnitInput when the norm deviates from 1 by more than ``tol``.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise NonUnitInput(f"expected a 3-vector, got shape {arr.shape}")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > tol:
        raise NonUnitInput(f"norm {norm} deviates from 1 by more than {tol}")
    return arr


def direction_to_vector(d: Direction) -> np.ndarray:
    """Unit 3-vector pointing along direction ``d``."""
    cp = math.cos(d.pitch)
    return np.array(
        [-cp * math.sin(d.yaw), -math.sin(d.pitch), -cp * math.cos(d.yaw)],
        dtype=np.float64,
    )


def vector_to_direction(v, tol: float = 1e-6) -> Direction:
    """Inverse of :func:`direction_to_vector` on unit vectors."""
    arr = unit_vector(v, tol=tol)
    pitch = -math.asin(max(-1.0, min(1.0, float(arr[1]))))
    # "+ 0.0" turns -0.0 into +0.0 so poles yield yaw 0, not -pi.
    yaw = math.atan2(-float(arr[0]) + 0.0, -float(arr[2]) + 0.0)
    return Direction(pitch, yaw)


def rotation_from_direction(d: Direction) -> np.ndarray:
    """Rotation carrying the frontal axis (0, 0, -1) onto direction ``d``.

    Built as Ry(yaw) @ Rx(-pitch); the frontal direction maps to identity.
    """
    sp, cp = math.sin(d.pitch), math.cos(d.pitch)
    sy, cy = math.sin(d.yaw), math.cos(d.yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    return ry @ rx


class RotationMethod(enum.Enum):
    """How to build the rotation between two directions.

    COMPOSED (default) chains the per-direction Euler rotations so that
    rotations between directions compose exactly as a group. MINIMAL is the
    shortest-arc axis-angle rotation; it maps source onto target too but does
    not compose, and is provided for experimentation only.
    """

    COMPOSED = "composed"
    MINIMAL = "minimal"


def rotation_between(
    src: Direction, dst: Direction, method: RotationMethod = RotationMethod.COMPOSED
) -> np.ndarray:
    """Rotation mapping ``direction_to_vector(src)`` onto ``direction_to_vector(dst)``."""
    if method is RotationMethod.COMPOSED:
        return rotation_from_direction(dst) @ rotation_from_direction(src).T
    return _minimal_rotation(direction_to_vector(src), direction_to_vector(dst))


def _minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking unit vector ``a`` to unit vector ``b``."""
    axis = np.cross(a, b)
    norm = float(np.linalg.norm(axis))
    cos_ang = max(-1.0, min(1.0, float(np.dot(a, b))))
    if norm < 1e-12:
        if cos_ang > 0.0:
            return np.eye(3)
        # Antipodal: rotate by pi about any axis orthogonal to a.
        helper = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        return _rodrigues(axis, math.pi)
    return _rodrigues(axis / norm, math.atan2(norm, cos_ang))


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def angular_error(a, b) -> float:
    """Angle in radians between two unit vectors, in [0, pi].

    Mathematically acos of the dot product clamped to [-1, 1]; evaluated as
    atan2(|a x b|, a.b), which computes the same value without acos's loss
    of resolution near 0 and pi (identical inputs give exactly 0).
    """
    va = unit_vector(a)
    vb = unit_vector(b)
    cross = float(np.linalg.norm(np.cross(va, vb)))
    return math.atan2(cross, float(np.dot(va, vb)))


def angular_error_directions(a: Direction, b: Direction) -> float:
    """Angle in radians between the vectors of two directions."""
    return angular_error(direction_to_vector(a), direction_to_vector(b))


def disk_distance(a: Direction, b: Direction) -> float:
    """Euclidean distance between two directions in (pitch, yaw) space."""
    return math.hypot(a.pitch - b.pitch, wrap_yaw(a.yaw - b.yaw))


def sample_disk_direction(
    center: Direction, radius: float, rng: np.random.Generator
) -> Direction:
    """Draw a direction uniformly from the (pitch, yaw) disk around ``center``.

    ``radius`` is in radians and must lie in (0, pi/2]. Uniformity over the
    disk comes from r = radius*sqrt(u), theta = 2*pi*u'. The disk must stay
    inside the valid direction range (|pitch| <= pi/2); yaw wraps.
    """
    if not 0.0 < radius <= _HALF_PI:
        raise InvalidDirection(f"disk radius {radius} outside (0, pi/2]")
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    pitch = center.pitch + r * math.cos(theta)
    yaw = wrap_yaw(center.yaw + r * math.sin(theta))
    return Direction(pitch, yaw)


def is_rotation(matrix: np.ndarray, tol: float = 1e-9) -> bool:
    """True when ``matrix`` is orthonormal with determinant 1 within ``tol``."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.shape != (3, 3):
        return False
    ortho = np.abs(arr.T @ arr - np.eye(3)).max() <= tol
    return bool(ortho and abs(float(np.linalg.det(arr)) - 1.0) <= tol)

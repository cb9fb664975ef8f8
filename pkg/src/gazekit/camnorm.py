"""Virtual-camera data normalization.

Warps an input image to a virtual camera that faces a 3D reference point on
the face at a fixed distance, and transforms gaze/head labels by the same
rotation. The scaling factor acts on 3D depth (z), so direction labels are
affected by the rotation only, never by the distance standardization. The
alternative formulation that scales in the image plane instead yields the
same pixels but different label algebra; only the 3D-scaling variant is
implemented here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, InvalidRotation
from .geometry import Direction, is_rotation, vector_to_direction
from .raster import CameraIntrinsics, ImageBuffer, bilinear_sample

__all__ = [
    "CameraIntrinsics",
    "NormalizationSpec",
    "HeadPose",
    "normalization_rotation",
    "normalization_warp",
    "normalize_sample",
    "denormalize_direction",
    "warp_image",
]

_FORWARD = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class NormalizationSpec:
    """Virtual camera parameters for normalized images."""

    focal_norm: float = 500.0
    distance_norm: float = 600.0
    out_width: int = 128
    out_height: int = 128

    def __post_init__(self):
        if min(self.focal_norm, self.distance_norm, self.out_width, self.out_height) <= 0:
            raise ValueError("normalization parameters must be positive")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.focal_norm,
            fy=self.focal_norm,
            cx=self.out_width / 2.0,
            cy=self.out_height / 2.0,
        )


@dataclass(frozen=True)
class HeadPose:
    """Head orientation and position in camera coordinates (mm)."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if not is_rotation(rot, tol=1e-6):
            raise InvalidRotation("head pose rotation is not a proper rotation")
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def forward_axis(self) -> np.ndarray:
        return self.rotation @ _FORWARD


def normalization_rotation(face_center, head: HeadPose) -> np.ndarray:
    """Rotation that puts the face center on the optical axis with zero roll.

    The new z-axis points at the face center; the new y-axis is built from
    the head's x-axis so the roll of the head is removed.
    """
    center = np.asarray(face_center, dtype=np.float64).reshape(3)
    dist = float(np.linalg.norm(center))
    if dist <= 0.0:
        raise DegenerateGeometry("face center must be away from the camera origin")
    z_axis = center / dist
    x_head = head.rotation[:, 0]
    y_axis = np.cross(z_axis, x_head)
    y_norm = float(np.linalg.norm(y_axis))
    if y_norm < 1e-8:
        raise DegenerateGeometry("view axis is parallel to the head x-axis")
    y_axis = y_axis / y_norm
    x_axis = np.cross(y_axis, z_axis)
    return np.vstack([x_axis, y_axis, z_axis])


def normalization_warp(
    intrinsics: CameraIntrinsics,
    rotation: np.ndarray,
    face_distance: float,
    spec: NormalizationSpec,
) -> np.ndarray:
    """Homography from original pixels to normalized pixels.

    W = C_n @ S @ R_n @ C_r^-1 with S = diag(1, 1, distance_norm / face_distance).
    """
    if face_distance <= 0.0:
        raise DegenerateGeometry(f"face distance {face_distance} must be positive")
    scale = np.diag([1.0, 1.0, spec.distance_norm / face_distance])
    return spec.intrinsics().matrix() @ scale @ rotation @ np.linalg.inv(intrinsics.matrix())


def warp_image(image: ImageBuffer, warp: np.ndarray, width: int, height: int) -> ImageBuffer:
    """Resample ``image`` through homography ``warp`` onto a width x height grid.

    Each output pixel center is pulled back through the inverse warp and
    bilinearly sampled with edge clamping (zero-fill would paint artificial
    black borders into downstream image metrics).
    """
    inv = np.linalg.inv(warp)
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    ones = np.ones_like(gx)
    src = np.einsum("ij,jhw->ihw", inv, np.stack([gx, gy, ones]))
    sx = src[0] / src[2]
    sy = src[1] / src[2]
    return ImageBuffer(np.clip(bilinear_sample(image.pixels, sx, sy), 0.0, 1.0))


def normalize_sample(
    image: ImageBuffer,
    intrinsics: CameraIntrinsics,
    head: HeadPose,
    gaze_vector,
    face_center,
    spec: NormalizationSpec,
) -> tuple[ImageBuffer, Direction, Direction, np.ndarray]:
    """Warp one sample to the virtual camera and rotate its labels.

    Returns (normalized image, head direction, gaze direction, R_n). Labels
    are pure rotations of the inputs: the distance scaling never touches
    them.
    """
    center = np.asarray(face_center, dtype=np.float64).reshape(3)
    rotation = normalization_rotation(center, head)
    warp = normalization_warp(intrinsics, rotation, float(np.linalg.norm(center)), spec)
    warped = warp_image(image, warp, spec.out_width, spec.out_height)
    gaze = np.asarray(gaze_vector, dtype=np.float64).reshape(3)
    gaze_dir = vector_to_direction(rotation @ (gaze / np.linalg.norm(gaze)))
    head_dir = vector_to_direction(rotation @ head.forward_axis())
    return warped, head_dir, gaze_dir, rotation


def denormalize_direction(d: Direction, rotation: np.ndarray) -> np.ndarray:
    """Map a normalized-space direction back to an original-camera vector."""
    from .geometry import direction_to_vector

    return np.asarray(rotation, dtype=np.float64).T @ direction_to_vector(d)


def warp_to_bytes(warp: np.ndarray) -> bytes:
    """Serialize a 3x3 homography as 9 little-endian float64, row-major."""
    arr = np.asarray(warp, dtype=np.float64)
    if arr.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {arr.shape}")
    return arr.astype("<f8").tobytes()


def warp_from_bytes(blob: bytes) -> np.ndarray:
    """Inverse of :func:`warp_to_bytes`."""
    if len(blob) != 72:
        raise ValueError(f"expected 72 bytes (9 float64), got {len(blob)}")
    return np.frombuffer(blob, dtype="<f8").reshape(3, 3).copy()

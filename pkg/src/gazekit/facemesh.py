"""Colored 3D face meshes: camera placement, texture lifting, rigid rotation.

The key property of the augmentation path is label exactness: rotating a
labeled mesh about its face center transforms the stored gaze/head labels by
the same rotation as the geometry, so a rendered sample's labels are known
analytically rather than estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BehindCamera, NoConvergence, SingularNormalEquations
from .camnorm import HeadPose
from .geometry import Direction, rotation_between, unit_vector
from .raster import CameraIntrinsics, ImageBuffer, bilinear_sample

_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class FaceMesh:
    """Triangle mesh in camera coordinates with per-vertex RGB colors.

    ``face_center`` defaults to the centroid of the landmark vertices (or of
    all vertices when there are no landmarks); it is the pivot used by
    rotation augmentation.
    """

    vertices: np.ndarray  # (n, 3) mm
    triangles: np.ndarray  # (m, 3) int indices
    colors: np.ndarray  # (n, 3) in [0, 1]
    landmark_indices: tuple[int, ...] = ()
    face_center: np.ndarray | None = None

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        colors = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64))
        if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) < 3:
            raise ValueError(f"vertices must be (n>=3, 3), got {verts.shape}")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle indices out of range")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must be (m, 3), got {tris.shape}")
        if colors.shape != verts.shape:
            raise ValueError("colors must align with vertices")
        if colors.size and (colors.min() < -1e-12 or colors.max() > 1.0 + 1e-12):
            raise ValueError("colors must lie in [0, 1]")
        lm = tuple(int(i) for i in self.landmark_indices)
        if any(i < 0 or i >= len(verts) for i in lm):
            raise ValueError("landmark index out of range")
        if self.face_center is None:
            pivot = verts[list(lm)].mean(axis=0) if lm else verts.mean(axis=0)
        else:
            pivot = np.asarray(self.face_center, dtype=np.float64).reshape(3)
        if not np.isfinite(pivot).all():
            raise ValueError("face center must be finite")
        for arr in (verts, tris, colors, pivot):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "landmark_indices", lm)
        object.__setattr__(self, "face_center", pivot)


@dataclass(frozen=True)
class LabeledMesh:
    """A face mesh with its head pose and gaze vector in camera coordinates."""

    mesh: FaceMesh
    head: HeadPose
    gaze_vector: np.ndarray  # unit 3-vector

    def __post_init__(self):
        gaze = unit_vector(self.gaze_vector)
        gaze.flags.writeable = False
        object.__setattr__(self, "gaze_vector", gaze)


@dataclass(frozen=True)
class SimilarityTransform:
    """Maps model coordinates to camera coordinates: x -> scale * R x + t."""

    scale: float
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def _project(points: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    z = points[:, 2]
    return np.stack(
        [intrinsics.fx * points[:, 0] / z + intrinsics.cx,
         intrinsics.fy * points[:, 1] / z + intrinsics.cy],
        axis=1,
    )


@dataclass
class _GaugeState:
    """Solver state: observable parameters at a fixed z-distance gauge.

    Perspective projection cannot tell model scale from face distance
    (scaling scale and translation together reprojects identically), so the
    solver works in the observable coordinates (scale, tx, ty) / tz with tz
    pinned to its initial value, plus the rotation when it is being fitted.
    """

    theta: np.ndarray  # (a, b, c) = (scale, tx, ty) / tz
    rotation: np.ndarray
    tz: float

    def camera_points(self, model_pts: np.ndarray) -> np.ndarray:
        q = model_pts @ self.rotation.T
        a, b, c = self.theta
        return self.tz * (a * q + np.array([b, c, 1.0]))

    def to_transform(self) -> SimilarityTransform:
        a, b, c = self.theta
        return SimilarityTransform(
            scale=a * self.tz,
            rotation=self.rotation,
            translation=np.array([b * self.tz, c * self.tz, self.tz]),
        )


def _residuals(
    model_pts: np.ndarray,
    observed: np.ndarray,
    intrinsics: CameraIntrinsics,
    state: _GaugeState,
) -> tuple[np.ndarray, float] | None:
    cam = state.camera_points(model_pts)
    if (cam[:, 2] <= _MIN_DEPTH).any():
        return None
    r = (_project(cam, intrinsics) - observed).ravel()
    return r, float(r @ r)


def projective_match(
    model_vertices: np.ndarray,
    landmark_pixels: np.ndarray,
    landmark_indices,
    intrinsics: CameraIntrinsics,
    init: SimilarityTransform,
    *,
    fit_rotation: bool = False,
    max_iterations: int = 100,
    step_tol: float = 1e-8,
) -> SimilarityTransform:
    """Fit the model-to-camera placement that reprojects onto the landmarks.

    Levenberg-damped Gauss-Newton over scale and translation; the rotation
    stays fixed at ``init.rotation`` (the reconstruction supplies pose)
    unless ``fit_rotation`` is set, which adds a local axis-angle update.
    Only cost-decreasing steps are accepted, so the returned fit never has a
    larger landmark reprojection error than ``init``.

    Landmark pixels cannot pin the absolute distance: scaling the transform
    about the camera origin reprojects identically. The solver therefore
    keeps the z-translation of ``init`` and expresses scale and x/y
    translation at that distance; initialize near the true face distance to
    recover metric placement.
    """
    model_pts = np.asarray(model_vertices, dtype=np.float64)[list(landmark_indices)]
    observed = np.asarray(landmark_pixels, dtype=np.float64)
    if observed.shape != (len(model_pts), 2):
        raise ValueError("landmark pixels must be (L, 2) aligned with indices")
    if len(model_pts) < 4:
        raise SingularNormalEquations(f"need at least 4 landmarks, got {len(model_pts)}")
    tz = float(init.translation[2])
    if tz <= 0.0:
        raise BehindCamera("initial transform places the model at or behind the camera")

    state = _GaugeState(
        theta=np.array([init.scale / tz, init.translation[0] / tz, init.translation[1] / tz]),
        rotation=np.asarray(init.rotation, dtype=np.float64),
        tz=tz,
    )
    res = _residuals(model_pts, observed, intrinsics, state)
    if res is None:
        raise BehindCamera("initial transform places landmarks at or behind the camera")
    r, cost = res

    n_params = 6 if fit_rotation else 3
    lam = 1e-3
    for _ in range(max_iterations):
        jac = _jacobian(model_pts, intrinsics, state, fit_rotation)
        if np.linalg.matrix_rank(jac) < n_params:
            raise SingularNormalEquations("landmark Jacobian is rank-deficient")
        grad = jac.T @ r
        hess = jac.T @ jac
        while True:
            delta = np.linalg.solve(hess + lam * np.eye(n_params), -grad)
            if float(np.linalg.norm(delta)) < step_tol:
                return state.to_transform()
            candidate = _apply_step(state, delta, fit_rotation)
            trial = None
            if candidate is not None:
                trial = _residuals(model_pts, observed, intrinsics, candidate)
            if trial is not None and trial[1] < cost:
                state, (r, cost) = candidate, trial
                lam = max(lam * 0.1, 1e-15)
                break
            lam *= 10.0
            if lam > 1e12:
                raise NoConvergence(
                    "damped least squares stalled",
                    last_iterate=state.to_transform(),
                    residual=cost,
                )
    return state.to_transform()


def _apply_step(state: _GaugeState, delta: np.ndarray, fit_rotation: bool) -> _GaugeState | None:
    theta = state.theta + delta[:3]
    if theta[0] <= 0.0:  # scale must stay positive
        return None
    rotation = state.rotation
    if fit_rotation:
        rotation = _exp_so3(delta[3:6]) @ rotation
    return _GaugeState(theta=theta, rotation=rotation, tz=state.tz)


def _exp_so3(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return np.eye(3)
    x, y, z = w / angle
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def _jacobian(
    model_pts: np.ndarray,
    intrinsics: CameraIntrinsics,
    state: _GaugeState,
    fit_rotation: bool,
) -> np.ndarray:
    q = model_pts @ state.rotation.T
    a = state.theta[0]
    p = a * q + np.array([state.theta[1], state.theta[2], 1.0])  # camera points / tz
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    n = len(model_pts)

    # d(pixel)/d(scaled camera point)
    du = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    du[:, 0] = intrinsics.fx / z
    du[:, 2] = -intrinsics.fx * x / z**2
    dv[:, 1] = intrinsics.fy / z
    dv[:, 2] = -intrinsics.fy * y / z**2

    jac = np.zeros((2 * n, 6 if fit_rotation else 3))
    # dp/da = q, dp/db = e_x, dp/dc = e_y
    jac[0::2, 0] = (du * q).sum(axis=1)
    jac[1::2, 0] = (dv * q).sum(axis=1)
    jac[0::2, 1] = du[:, 0]
    jac[1::2, 1] = dv[:, 0]
    jac[0::2, 2] = du[:, 1]
    jac[1::2, 2] = dv[:, 1]
    if fit_rotation:
        # dp/d(axis-angle) = -a * [q]_x under a left perturbation of R
        for i in range(n):
            skew = np.array(
                [
                    [0.0, -q[i, 2], q[i, 1]],
                    [q[i, 2], 0.0, -q[i, 0]],
                    [-q[i, 1], q[i, 0], 0.0],
                ]
            )
            dp = -a * skew
            jac[2 * i, 3:6] = du[i] @ dp
            jac[2 * i + 1, 3:6] = dv[i] @ dp
    return jac


def texture_from_image(
    mesh: FaceMesh, image: ImageBuffer, intrinsics: CameraIntrinsics
) -> FaceMesh:
    """Color each vertex with the bilinear image sample at its projection.

    Vertices projecting outside the frame take edge-clamped samples; any
    vertex at or behind the camera plane is an error.
    """
    z = mesh.vertices[:, 2]
    if (z <= 0.0).any():
        raise BehindCamera("mesh has vertices at or behind the camera plane")
    px = intrinsics.fx * mesh.vertices[:, 0] / z + intrinsics.cx
    py = intrinsics.fy * mesh.vertices[:, 1] / z + intrinsics.cy
    colors = np.clip(bilinear_sample(image.pixels, px, py), 0.0, 1.0)
    return replace(mesh, colors=colors)


def rotate_about_center(lm: LabeledMesh, rotation: np.ndarray) -> LabeledMesh:
    """Rigidly rotate mesh and labels about the face center.

    Vertices move by v -> R (v - center) + center; the gaze vector and the
    head rotation are premultiplied by the same R, so the new labels are the
    analytic rotation of the old ones. Topology, colors and the pivot are
    untouched. Pivoting elsewhere (say the camera origin) would change only
    where the face ends up, never the direction labels.
    """
    rot = np.asarray(rotation, dtype=np.float64)
    if np.array_equal(rot, np.eye(3)):
        return lm
    center = lm.mesh.face_center
    vertices = (lm.mesh.vertices - center) @ rot.T + center
    mesh = replace(lm.mesh, vertices=vertices, face_center=center)
    head = HeadPose(rotation=rot @ lm.head.rotation, translation=lm.head.translation)
    return LabeledMesh(mesh=mesh, head=head, gaze_vector=rot @ lm.gaze_vector)


def head_target_rotation(source_head: Direction, target_head: Direction) -> np.ndarray:
    """Rotation carrying the source head direction onto the target."""
    return rotation_between(source_head, target_head)


def gaze_target_rotation(source_gaze: Direction, target_gaze: Direction) -> np.ndarray:
    """Rotation carrying the source gaze direction onto the target."""
    return rotation_between(source_gaze, target_gaze)

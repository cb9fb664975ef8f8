"""Minimal deterministic software rasterizer.

Projects camera-space triangle meshes through a pinhole camera and fills
them with a z-buffer and perspective-correct per-vertex color
interpolation. Pixel centers sit at half-integer coordinates
(x + 0.5, y + 0.5); edge ties use the top-left rule (an edge owns its
boundary pixels when it is exactly horizontal going right, or when it goes
up in image coordinates). No anti-aliasing, no lighting: identical inputs
produce bit-identical images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import BehindCamera, EmptyPool

if TYPE_CHECKING:
    from .facemesh import FaceMesh


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with zero skew; units are pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major RGB image with channels as reals in [0, 1]."""

    pixels: np.ndarray  # (height, width, 3) float64

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("pixels must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @staticmethod
    def full(width: int, height: int, color=(0.0, 0.0, 0.0)) -> "ImageBuffer":
        pixels = np.empty((height, width, 3), dtype=np.float64)
        pixels[:] = np.asarray(color, dtype=np.float64)
        return ImageBuffer(pixels)


@dataclass
class DepthBuffer:
    """Per-pixel depth in millimeters, initialized to +inf."""

    width: int
    height: int
    values: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.full((self.height, self.width), np.inf, dtype=np.float64)


@dataclass
class RenderStats:
    """Counters for triangles a render could not draw."""

    behind_camera: int = 0
    degenerate: int = 0


def project_vertex(v, intrinsics: CameraIntrinsics) -> tuple[float, float, float]:
    """Perspective-project a camera-space point to (x_px, y_px, depth_mm)."""
    x, y, z = (float(c) for c in v)
    if z <= 0.0:
        raise BehindCamera(f"vertex depth {z} <= 0")
    return (intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy, z)


def bilinear_sample(pixels: np.ndarray, x, y) -> np.ndarray:
    """Bilinearly sample an image at continuous pixel coordinates.

    Coordinates follow the half-integer pixel-center convention; positions
    outside the image clamp to the border pixels.
    """
    h, w = pixels.shape[:2]
    u = np.asarray(x, dtype=np.float64) - 0.5
    v = np.asarray(y, dtype=np.float64) - 0.5
    j0 = np.floor(u)
    i0 = np.floor(v)
    fu = (u - j0)[..., None]
    fv = (v - i0)[..., None]
    j0 = j0.astype(np.int64)
    i0 = i0.astype(np.int64)
    j0c = np.clip(j0, 0, w - 1)
    j1c = np.clip(j0 + 1, 0, w - 1)
    i0c = np.clip(i0, 0, h - 1)
    i1c = np.clip(i0 + 1, 0, h - 1)
    top = pixels[i0c, j0c] * (1.0 - fu) + pixels[i0c, j1c] * fu
    bottom = pixels[i1c, j0c] * (1.0 - fu) + pixels[i1c, j1c] * fu
    return top * (1.0 - fv) + bottom * fv


def resize_bilinear(image: ImageBuffer, width: int, height: int) -> ImageBuffer:
    """Resize by sampling the source at the centers of the output grid."""
    xs = (np.arange(width) + 0.5) * (image.width / width)
    ys = (np.arange(height) + 0.5) * (image.height / height)
    gx, gy = np.meshgrid(xs, ys)
    return ImageBuffer(np.clip(bilinear_sample(image.pixels, gx, gy), 0.0, 1.0))


def _edge(ax, ay, bx, by, px, py):
    """Signed edge function of point p against directed edge a -> b."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _is_top_left(ax, ay, bx, by) -> bool:
    return (ay == by and bx > ax) or (by < ay)


def rasterize(
    mesh: "FaceMesh",
    intrinsics: CameraIntrinsics,
    background: ImageBuffer,
    stats: RenderStats | None = None,
) -> ImageBuffer:
    """Render a colored mesh over ``background`` with a z-buffer.

    Triangles containing a vertex at or behind the camera plane are skipped
    and counted in ``stats``; uncovered pixels keep the background color.
    """
    h, w = background.height, background.width
    out = background.pixels.copy()
    depth = DepthBuffer(w, h).values

    verts = np.asarray(mesh.vertices, dtype=np.float64)
    colors = np.asarray(mesh.colors, dtype=np.float64)
    tris = np.asarray(mesh.triangles, dtype=np.int64)
    if len(tris) == 0 or len(verts) == 0:
        return ImageBuffer(out)

    z = verts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = intrinsics.fx * verts[:, 0] / z + intrinsics.cx
        sy = intrinsics.fy * verts[:, 1] / z + intrinsics.cy

    for ia, ib, ic in tris:
        if z[ia] <= 0.0 or z[ib] <= 0.0 or z[ic] <= 0.0:
            if stats is not None:
                stats.behind_camera += 1
            continue
        ax, ay, bx, by, cx_, cy_ = sx[ia], sy[ia], sx[ib], sy[ib], sx[ic], sy[ic]
        area2 = _edge(ax, ay, bx, by, cx_, cy_)
        if area2 == 0.0:
            if stats is not None:
                stats.degenerate += 1
            continue
        if area2 < 0.0:
            ib, ic = ic, ib
            bx, by, cx_, cy_ = cx_, cy_, bx, by
            area2 = -area2

        x_min = max(int(np.floor(min(ax, bx, cx_) - 0.5)), 0)
        x_max = min(int(np.ceil(max(ax, bx, cx_) - 0.5)), w - 1)
        y_min = max(int(np.floor(min(ay, by, cy_) - 0.5)), 0)
        y_max = min(int(np.ceil(max(ay, by, cy_) - 0.5)), h - 1)
        if x_min > x_max or y_min > y_max:
            continue

        px = np.arange(x_min, x_max + 1, dtype=np.float64) + 0.5
        py = np.arange(y_min, y_max + 1, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(px, py)

        e0 = _edge(ax, ay, bx, by, gx, gy)  # opposite vertex c
        e1 = _edge(bx, by, cx_, cy_, gx, gy)  # opposite vertex a
        e2 = _edge(cx_, cy_, ax, ay, gx, gy)  # opposite vertex b

        inside = (
            ((e0 > 0.0) | ((e0 == 0.0) & _is_top_left(ax, ay, bx, by)))
            & ((e1 > 0.0) | ((e1 == 0.0) & _is_top_left(bx, by, cx_, cy_)))
            & ((e2 > 0.0) | ((e2 == 0.0) & _is_top_left(cx_, cy_, ax, ay)))
        )
        if not inside.any():
            continue

        la = e1 / area2
        lb = e2 / area2
        lc = e0 / area2
        # Extrapolated barycentrics outside the triangle can zero inv_z; those
        # pixels are masked out by `inside`, so silence the division there.
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_z = la / z[ia] + lb / z[ib] + lc / z[ic]
            tri_depth = 1.0 / inv_z
            closer = inside & (tri_depth < depth[y_min : y_max + 1, x_min : x_max + 1])
            if not closer.any():
                continue
            num = (
                la[..., None] * colors[ia] / z[ia]
                + lb[..., None] * colors[ib] / z[ib]
                + lc[..., None] * colors[ic] / z[ic]
            )
            shade = np.clip(num / inv_z[..., None], 0.0, 1.0)

        region = out[y_min : y_max + 1, x_min : x_max + 1]
        region[closer] = shade[closer]
        depth_region = depth[y_min : y_max + 1, x_min : x_max + 1]
        depth_region[closer] = tri_depth[closer]

    return ImageBuffer(out)


def random_background(
    rng: np.random.Generator,
    mode: str,
    *,
    width: int,
    height: int,
    pool: Sequence[ImageBuffer] = (),
) -> ImageBuffer:
    """Draw a background image: a uniform-random solid color or a pool image.

    Pool images are chosen uniformly and resized bilinearly to the output
    dimensions. Deterministic given the generator state.
    """
    if mode == "solid":
        return ImageBuffer.full(width, height, color=rng.random(3))
    if mode == "image-pool":
        if not pool:
            raise EmptyPool("image-pool background requested but the pool is empty")
        pick = int(rng.integers(len(pool)))
        image = pool[pick]
        if image.width == width and image.height == height:
            return image
        return resize_bilinear(image, width, height)
    raise ValueError(f"unknown background mode {mode!r}")

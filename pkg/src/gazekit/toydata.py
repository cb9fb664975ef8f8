"""Synthetic desk-scale data for demos and pipeline tests.

Builds small colored ellipsoid "faces" with a nose bump, places them in
camera space under known head/gaze labels, renders source images and writes
a complete dataset (meshes, PNGs, manifest) that the augmentation and
evaluation pipelines can run end to end without any real recordings.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .camnorm import HeadPose, NormalizationSpec
from .facemesh import FaceMesh, LabeledMesh
from .geometry import Direction, direction_to_vector, rotation_from_direction
from .io import ManifestEntry, write_manifest, write_image, write_mesh
from .raster import ImageBuffer, rasterize

_AXES = np.array([70.0, 90.0, 80.0])  # ellipsoid semi-axes, mm


def make_face_mesh(
    head: Direction,
    *,
    center=(0.0, 0.0, 600.0),
    rows: int = 10,
    cols: int = 14,
    tint=(0.0, 0.0, 0.0),
) -> FaceMesh:
    """Ellipsoid head with a nose bump, oriented along ``head`` about ``center``."""
    center = np.asarray(center, dtype=np.float64)
    us = np.pi * (np.arange(rows) + 1.0) / (rows + 1.0)
    vs = 2.0 * np.pi * np.arange(cols) / cols
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    unit = np.stack(
        [np.sin(uu) * np.cos(vv), np.cos(uu), np.sin(uu) * np.sin(vv)], axis=-1
    ).reshape(-1, 3)
    local = unit * _AXES
    # Nose: push the front-center patch further along -z.
    front = (unit[:, 2] < -0.85) & (np.abs(unit[:, 1]) < 0.35)
    local[front, 2] *= 1.18

    colors = np.clip(0.35 + 0.3 * (unit + 1.0) / 2.0 + np.asarray(tint), 0.0, 1.0)

    tris = []
    for i in range(rows - 1):
        for j in range(cols):
            a = i * cols + j
            b = i * cols + (j + 1) % cols
            c = (i + 1) * cols + j
            d = (i + 1) * cols + (j + 1) % cols
            tris.append([a, b, c])
            tris.append([b, d, c])

    landmarks = (
        int(np.argmin(local[:, 2])),  # nose tip (front-most)
        int(np.argmin(local[:, 1])),  # top of head
        int(np.argmax(local[:, 1])),  # chin
        int(np.argmin(local[:, 0])),  # left
        int(np.argmax(local[:, 0])),  # right
    )

    rot = rotation_from_direction(head)
    vertices = local @ rot.T + center
    return FaceMesh(
        vertices=vertices,
        triangles=np.array(tris, dtype=np.int64),
        colors=colors,
        landmark_indices=landmarks,
        face_center=center,
    )


def make_labeled_mesh(
    head: Direction, gaze: Direction, *, center=(0.0, 0.0, 600.0), tint=(0.0, 0.0, 0.0)
) -> LabeledMesh:
    mesh = make_face_mesh(head, center=center, tint=tint)
    pose = HeadPose(rotation=rotation_from_direction(head), translation=mesh.face_center)
    return LabeledMesh(mesh=mesh, head=pose, gaze_vector=direction_to_vector(gaze))


def make_toy_dataset(
    root: str | Path,
    *,
    n_subjects: int = 2,
    samples_per_subject: int = 3,
    seed: int = 0,
    max_angle_deg: float = 8.0,
    norm_spec: NormalizationSpec = NormalizationSpec(),
) -> list[ManifestEntry]:
    """Write a self-contained dataset of rendered toy faces under ``root``.

    Returns the manifest rows (also written to ``root/manifest.jsonl``).
    Sources are near-frontal, mimicking the label range augmentation is
    meant to extend.
    """
    root = Path(root)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    limit = math.radians(max_angle_deg)
    entries: list[ManifestEntry] = []
    background = ImageBuffer.full(
        norm_spec.out_width, norm_spec.out_height, (0.5, 0.5, 0.5)
    )
    for s in range(n_subjects):
        subject = f"subj{s:03d}"
        tint = rng.uniform(-0.08, 0.08, size=3)
        for i in range(samples_per_subject):
            head = Direction(rng.uniform(-limit, limit), rng.uniform(-limit, limit))
            gaze = Direction(rng.uniform(-limit, limit), rng.uniform(-limit, limit))
            labeled = make_labeled_mesh(head, gaze, tint=tint)
            mesh_rel = f"meshes/{subject}_{i:03d}.mesh"
            image_rel = f"images/{subject}_{i:03d}.png"
            write_mesh(root / mesh_rel, labeled.mesh)
            write_image(
                root / image_rel,
                rasterize(labeled.mesh, norm_spec.intrinsics(), background),
            )
            entries.append(
                ManifestEntry(
                    subject=subject,
                    image=image_rel,
                    mesh=mesh_rel,
                    head=head,
                    gaze=gaze,
                    camera="toy",
                )
            )
    write_manifest(root / "manifest.jsonl", entries)
    return entries

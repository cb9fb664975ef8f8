"""Rotation augmentation pipeline: subject filtering, source selection,
disk-sampled targets, mesh rotation, rendering, output manifests.

A source sample is augmented by drawing target directions uniformly from an
angular disk, rotating its 3D face by the rotation between the source label
and the target (head-based or gaze-based), and re-rendering over a random
background. Labels of the outputs are analytic rotations of the inputs, so
the manifest never contains estimated values. Per-sample failures are
logged and skipped; a long run survives individual bad meshes.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camnorm import HeadPose, NormalizationSpec
from .errors import EmptyAfterFilter, GazekitError, LabelMismatch, RenderFailure
from .facemesh import LabeledMesh, rotate_about_center
from .geometry import (
    Direction,
    FRONTAL,
    angular_error,
    direction_to_vector,
    rotation_between,
    rotation_from_direction,
    sample_disk_direction,
    vector_to_direction,
)
from .io import ManifestEntry, ManifestWriter, read_image, read_mesh, write_image
from .raster import ImageBuffer, RenderStats, random_background, rasterize
from .seeding import sample_stream

__all__ = [
    "SamplingMode",
    "AugmentConfig",
    "AugmentedSample",
    "RenderReport",
    "select_sources",
    "augment_sample",
    "run_augmentation",
    "load_labeled_mesh",
]


class SamplingMode(enum.Enum):
    """Which label pair drives the augmentation rotation."""

    HEAD_BASED = "head"
    GAZE_BASED = "gaze"


@dataclass(frozen=True)
class AugmentConfig:
    mode: SamplingMode = SamplingMode.HEAD_BASED
    radius_deg: float = 60.0
    targets_per_source: int = 10
    sources_per_subject: int = 30
    min_subject_samples: int = 30
    seed: int = 0
    background_mode: str = "solid"
    background_pool: str | None = None
    target_center: Direction = FRONTAL

    def __post_init__(self):
        if not 0.0 < self.radius_deg <= 90.0:
            raise ValueError(f"radius_deg must lie in (0, 90], got {self.radius_deg}")
        if min(self.targets_per_source, self.sources_per_subject, self.min_subject_samples) < 1:
            raise ValueError("counts must be >= 1")
        if self.sources_per_subject > self.min_subject_samples:
            # Sampling exactly sources_per_subject without replacement needs
            # at least that many samples to survive the filter.
            raise ValueError(
                "sources_per_subject cannot exceed min_subject_samples "
                f"({self.sources_per_subject} > {self.min_subject_samples})"
            )
        if self.background_mode not in ("solid", "image-pool"):
            raise ValueError(f"unknown background mode {self.background_mode!r}")


@dataclass(frozen=True)
class AugmentedSample:
    image: ImageBuffer
    head: Direction
    gaze: Direction
    target: Direction


@dataclass
class RenderReport:
    planned: int = 0
    succeeded: int = 0
    failed: int = 0
    failures: list[dict] = field(default_factory=list)
    pool_hash: str | None = None

    def record_failure(self, row: str, reason: str) -> None:
        self.failed += 1
        self.failures.append({"row": row, "reason": reason})

    def to_json(self) -> dict:
        return {
            "planned": self.planned,
            "succeeded": self.succeeded,
            "failed": self.failed,
            "failures": self.failures,
            "pool_hash": self.pool_hash,
        }


def select_sources(
    manifest: list[ManifestEntry], cfg: AugmentConfig, rng: np.random.Generator
) -> dict[str, list[ManifestEntry]]:
    """Filter thin subjects and sample sources without replacement.

    Subjects with fewer than ``min_subject_samples`` rows are dropped; every
    retained subject contributes exactly ``sources_per_subject`` rows.
    Subjects are visited in sorted order so the draw depends only on the
    generator state.
    """
    groups: dict[str, list[ManifestEntry]] = {}
    for entry in manifest:
        groups.setdefault(entry.subject, []).append(entry)
    selected: dict[str, list[ManifestEntry]] = {}
    for subject in sorted(groups):
        entries = groups[subject]
        if len(entries) < cfg.min_subject_samples:
            continue
        picks = rng.choice(len(entries), size=cfg.sources_per_subject, replace=False)
        selected[subject] = [entries[i] for i in sorted(picks)]
    if not selected:
        raise EmptyAfterFilter(
            f"no subject has {cfg.min_subject_samples}+ samples (of {len(groups)} subjects)"
        )
    return selected


def load_labeled_mesh(entry: ManifestEntry, mesh_root: str | Path = ".") -> LabeledMesh:
    """Read the entry's mesh file and attach the manifest labels to it."""
    mesh = read_mesh(Path(mesh_root) / entry.mesh)
    head = HeadPose(
        rotation=rotation_from_direction(entry.head), translation=mesh.face_center
    )
    return LabeledMesh(mesh=mesh, head=head, gaze_vector=direction_to_vector(entry.gaze))


def _check_labels(entry: ManifestEntry, mesh: LabeledMesh) -> None:
    tol = math.radians(0.5)
    head_err = angular_error(mesh.head.forward_axis(), direction_to_vector(entry.head))
    gaze_err = angular_error(mesh.gaze_vector, direction_to_vector(entry.gaze))
    if head_err > tol or gaze_err > tol:
        raise LabelMismatch(
            f"mesh labels disagree with manifest labels by "
            f"(head {math.degrees(head_err):.2f} deg, gaze {math.degrees(gaze_err):.2f} deg)"
        )


def _augment_one(
    entry: ManifestEntry,
    mesh: LabeledMesh,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    norm_spec: NormalizationSpec,
    pool: tuple[ImageBuffer, ...],
) -> AugmentedSample:
    target = sample_disk_direction(cfg.target_center, math.radians(cfg.radius_deg), rng)
    if cfg.mode is SamplingMode.HEAD_BASED:
        rotation = rotation_between(entry.head, target)
    else:
        rotation = rotation_between(entry.gaze, target)
    rotated = rotate_about_center(mesh, rotation)
    background = random_background(
        rng,
        cfg.background_mode,
        width=norm_spec.out_width,
        height=norm_spec.out_height,
        pool=pool,
    )
    stats = RenderStats()
    image = rasterize(rotated.mesh, norm_spec.intrinsics(), background, stats=stats)
    if stats.behind_camera == len(rotated.mesh.triangles):
        raise RenderFailure("every triangle fell behind the camera")
    return AugmentedSample(
        image=image,
        head=vector_to_direction(rotated.head.forward_axis()),
        gaze=vector_to_direction(rotated.gaze_vector),
        target=target,
    )


def augment_sample(
    entry: ManifestEntry,
    mesh: LabeledMesh,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    *,
    norm_spec: NormalizationSpec = NormalizationSpec(),
    pool: tuple[ImageBuffer, ...] = (),
    failures: list | None = None,
) -> list[AugmentedSample]:
    """Render ``targets_per_source`` rotated views of one source sample.

    The mesh labels must agree with the manifest labels within 0.5 degrees.
    Per-target failures are skipped and appended to ``failures`` when a list
    is passed.
    """
    _check_labels(entry, mesh)
    outputs = []
    for index in range(cfg.targets_per_source):
        try:
            outputs.append(_augment_one(entry, mesh, cfg, rng, norm_spec, pool))
        except GazekitError as exc:
            if failures is None:
                raise
            failures.append({"row": f"{entry.subject}/{entry.image}#{index}", "reason": str(exc)})
    return outputs


def load_background_pool(pool_dir: str | Path) -> tuple[tuple[ImageBuffer, ...], str]:
    """Load every PNG in a directory (sorted) and hash the pool for the report."""
    paths = sorted(Path(pool_dir).glob("*.png"))
    digest = hashlib.sha256()
    images = []
    for p in paths:
        digest.update(p.name.encode("utf-8"))
        digest.update(hashlib.sha256(p.read_bytes()).digest())
        images.append(read_image(p))
    return tuple(images), digest.hexdigest()


def run_augmentation(
    manifest: list[ManifestEntry],
    cfg: AugmentConfig,
    output_dir: str | Path,
    *,
    norm_spec: NormalizationSpec = NormalizationSpec(),
    mesh_root: str | Path = ".",
    jobs: int = 1,
) -> tuple[list[ManifestEntry], RenderReport]:
    """Run the full augmentation over a manifest and persist the outputs.

    Writes PNGs under ``output_dir/images/``, a JSONL manifest and a JSON
    render report. Each output sample draws from a generator derived from
    (seed, subject, image path, target index), so re-running with any worker
    count reproduces byte-identical artifacts; failures are reported, never
    fatal.
    """
    out_root = Path(output_dir)
    (out_root / "images").mkdir(parents=True, exist_ok=True)

    report = RenderReport()
    pool: tuple[ImageBuffer, ...] = ()
    if cfg.background_mode == "image-pool":
        if not cfg.background_pool:
            raise ValueError("image-pool background requires background_pool")
        pool, report.pool_hash = load_background_pool(cfg.background_pool)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    selected = select_sources(manifest, cfg, rng)
    sources = [
        (subject, src_index, entry)
        for subject in sorted(selected)
        for src_index, entry in enumerate(selected[subject])
    ]
    report.planned = len(sources) * cfg.targets_per_source

    def process(task):
        subject, src_index, entry = task
        rows: list[ManifestEntry] = []
        failures: list[dict] = []
        try:
            mesh = load_labeled_mesh(entry, mesh_root)
            _check_labels(entry, mesh)
        except GazekitError as exc:
            for index in range(cfg.targets_per_source):
                failures.append(
                    {"row": f"{subject}/{entry.image}#{index}", "reason": str(exc)}
                )
            return rows, failures
        stem = Path(entry.image).stem
        for index in range(cfg.targets_per_source):
            stream = sample_stream(cfg.seed, subject, entry.image, index)
            try:
                sample = _augment_one(entry, mesh, cfg, stream, norm_spec, pool)
            except GazekitError as exc:
                failures.append(
                    {"row": f"{subject}/{entry.image}#{index}", "reason": str(exc)}
                )
                continue
            rel = f"images/{subject}_{src_index:04d}_{stem}_t{index:02d}.png"
            write_image(out_root / rel, sample.image)
            rows.append(
                ManifestEntry(
                    subject=subject,
                    image=rel,
                    mesh=entry.mesh,
                    head=sample.head,
                    gaze=sample.gaze,
                    camera=entry.camera,
                )
            )
        return rows, failures

    out_entries: list[ManifestEntry] = []
    with ManifestWriter(out_root / "manifest.jsonl") as writer:
        if jobs <= 1:
            results = map(process, sources)
            for rows, failures in results:
                for row in rows:
                    writer.write(row)
                    out_entries.append(row)
                for failure in failures:
                    report.record_failure(failure["row"], failure["reason"])
        else:
            with ThreadPoolExecutor(max_workers=jobs) as executor:
                for rows, failures in executor.map(process, sources):
                    for row in rows:
                        writer.write(row)
                        out_entries.append(row)
                    for failure in failures:
                        report.record_failure(failure["row"], failure["reason"])
    report.succeeded = len(out_entries)

    (out_root / "report.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_entries, report

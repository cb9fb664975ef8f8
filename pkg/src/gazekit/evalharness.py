"""Evaluation protocols and report generation.

Two protocols: redirect-to-angle draws target directions from an angular
disk and measures how far an estimator places the redirected image from the
intended labels; redirect-to-image retargets one real sample onto another
and additionally scores image agreement (and identity/feature metrics when
feature files are supplied). Reports aggregate per-record errors overall
and per target-angle bin so two runs can be differenced into an
error-reduction table.
"""

from __future__ import annotations

import csv
import json
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyRun, ExternalToolError, GazekitError
from .geometry import FRONTAL, Direction, disk_distance, sample_disk_direction
from .io import ManifestEntry, ManifestWriter, read_image, read_manifest, write_image
from .metrics import (
    FeatureSet,
    fid,
    identity_similarity,
    l1,
    mixed_rec_loss,
    ms_ssim,
    redirection_error,
)
from .raster import ImageBuffer
from .redirect import (
    Estimator,
    RedirectPattern,
    Redirector,
    RedirectRequest,
    expected_labels,
)
from .seeding import sample_stream

__all__ = [
    "ProtocolConfig",
    "EvalRecord",
    "Report",
    "ExternalEstimator",
    "redirect_to_angle",
    "redirect_to_image",
    "report",
    "load_report",
    "diff_reports",
]


@dataclass(frozen=True)
class ProtocolConfig:
    targets_per_source: int = 10
    radius_deg: float = 60.0
    sources_per_subject: int = 20
    pattern: RedirectPattern = RedirectPattern.BOTH
    seed: int = 0
    target_center: Direction = FRONTAL

    def __post_init__(self):
        if min(self.targets_per_source, self.sources_per_subject) < 1:
            raise ValueError("counts must be >= 1")
        if not 0.0 < self.radius_deg <= 90.0:
            raise ValueError(f"radius_deg must lie in (0, 90], got {self.radius_deg}")


@dataclass(frozen=True)
class EvalRecord:
    subject: str
    source_image: str
    source_head: Direction
    source_gaze: Direction
    target_head: Direction
    target_gaze: Direction
    estimated_head: Direction
    estimated_gaze: Direction
    target_angle_deg: float
    metrics: dict[str, float] = field(default_factory=dict)


def _select_eval_sources(
    manifest: list[ManifestEntry], cfg: ProtocolConfig
) -> list[ManifestEntry]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    groups: dict[str, list[ManifestEntry]] = {}
    for entry in manifest:
        groups.setdefault(entry.subject, []).append(entry)
    sources: list[ManifestEntry] = []
    for subject in sorted(groups):
        entries = groups[subject]
        take = min(cfg.sources_per_subject, len(entries))
        picks = rng.choice(len(entries), size=take, replace=False)
        sources.extend(entries[i] for i in sorted(picks))
    return sources


class _ImageCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._cache: dict[str, ImageBuffer] = {}

    def get(self, rel: str) -> ImageBuffer:
        if rel not in self._cache:
            self._cache[rel] = read_image(self.root / rel)
        return self._cache[rel]


def redirect_to_angle(
    manifest: list[ManifestEntry],
    redirector: Redirector,
    estimator: Estimator,
    cfg: ProtocolConfig,
    *,
    image_root: str | Path = ".",
    failures: list | None = None,
    jobs: int = 1,
) -> list[EvalRecord]:
    """Redirect sampled sources to disk-drawn target directions.

    For each source, ``targets_per_source`` directions are drawn from the
    disk; the pattern decides whether the draw is a head or gaze target.
    Estimation errors are measured in degrees against the labels an ideal
    redirector would produce. Failing samples are appended to ``failures``
    (when given) and the run continues. Sources are independent work units:
    with ``jobs`` > 1 they run on a thread pool while results merge in plan
    order, so the worker count never changes the output.
    """
    if not manifest:
        raise EmptyRun("manifest is empty")
    sources = _select_eval_sources(manifest, cfg)
    root = Path(image_root)

    def process(entry: ManifestEntry):
        source_image = read_image(root / entry.image)
        out_records: list[EvalRecord] = []
        out_failures: list[dict] = []
        for index in range(cfg.targets_per_source):
            stream = sample_stream(cfg.seed, entry.subject, entry.image, index)
            target = sample_disk_direction(
                cfg.target_center, math.radians(cfg.radius_deg), stream
            )
            target_head = target if cfg.pattern is not RedirectPattern.GAZE_ONLY else None
            target_gaze = target if cfg.pattern is RedirectPattern.GAZE_ONLY else None
            try:
                want_head, want_gaze = expected_labels(
                    entry.head, entry.gaze, cfg.pattern, target_head, target_gaze
                )
                result = redirector.redirect(
                    RedirectRequest(
                        image=source_image,
                        head=entry.head,
                        gaze=entry.gaze,
                        pattern=cfg.pattern,
                        target_head=target_head,
                        target_gaze=target_gaze,
                        mesh_path=entry.mesh,
                    )
                )
                est_head, est_gaze = estimator.estimate(result.image, sidecar=result.sidecar())
            except GazekitError as exc:
                if failures is None:
                    raise
                out_failures.append(
                    {"row": f"{entry.subject}/{entry.image}#{index}", "reason": str(exc)}
                )
                continue
            out_records.append(
                EvalRecord(
                    subject=entry.subject,
                    source_image=entry.image,
                    source_head=entry.head,
                    source_gaze=entry.gaze,
                    target_head=want_head,
                    target_gaze=want_gaze,
                    estimated_head=est_head,
                    estimated_gaze=est_gaze,
                    target_angle_deg=math.degrees(disk_distance(target, cfg.target_center)),
                    metrics={
                        "head_err_deg": redirection_error(want_head, est_head),
                        "gaze_err_deg": redirection_error(want_gaze, est_gaze),
                    },
                )
            )
        return out_records, out_failures

    records: list[EvalRecord] = []
    if jobs <= 1:
        for out_records, out_failures in map(process, sources):
            records.extend(out_records)
            if failures is not None:
                failures.extend(out_failures)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as executor:
            for out_records, out_failures in executor.map(process, sources):
                records.extend(out_records)
                if failures is not None:
                    failures.extend(out_failures)
    return records


def redirect_to_image(
    pairs: list[tuple[ManifestEntry, ManifestEntry]],
    redirector: Redirector,
    estimator: Estimator,
    pattern: RedirectPattern = RedirectPattern.BOTH,
    *,
    alpha: float = 0.84,
    image_root: str | Path = ".",
    feature_files: tuple[FeatureSet, FeatureSet] | None = None,
    run_metrics: dict | None = None,
    failures: list | None = None,
) -> list[EvalRecord]:
    """Redirect each source toward its paired target sample's labels.

    Head/gaze errors are measured against the target row's labels; image
    metrics (MS-SSIM, L1, mixed reconstruction) against the target image,
    with the produced image first quantized to 8 bits per channel (the
    precision generated images are persisted at), so a pixel-perfect
    redirection scores exactly 1/0. ``feature_files`` is an optional
    (generated, target) pair of feature sets aligned to pair order: it adds
    per-pair identity similarity and, when ``run_metrics`` is given, a
    run-level Fréchet distance under key "fid".
    """
    if not pairs:
        raise EmptyRun("no pairs to evaluate")
    if feature_files is not None:
        gen_feats, tgt_feats = feature_files
        if len(gen_feats) != len(pairs) or len(tgt_feats) != len(pairs):
            raise ValueError(
                f"feature files must align with pairs: {len(gen_feats)}/{len(tgt_feats)} "
                f"rows vs {len(pairs)} pairs"
            )
    cache = _ImageCache(image_root)
    records: list[EvalRecord] = []
    for index, (src, tgt) in enumerate(pairs):
        target_head = tgt.head if pattern is not RedirectPattern.GAZE_ONLY else None
        target_gaze = tgt.gaze if pattern is RedirectPattern.GAZE_ONLY else None
        try:
            result = redirector.redirect(
                RedirectRequest(
                    image=cache.get(src.image),
                    head=src.head,
                    gaze=src.gaze,
                    pattern=pattern,
                    target_head=target_head,
                    target_gaze=target_gaze,
                    mesh_path=src.mesh,
                )
            )
            est_head, est_gaze = estimator.estimate(result.image, sidecar=result.sidecar())
            target_image = cache.get(tgt.image)
            produced = ImageBuffer(np.round(result.image.pixels * 255.0) / 255.0)
            metrics = {
                "head_err_deg": redirection_error(tgt.head, est_head),
                "gaze_err_deg": redirection_error(tgt.gaze, est_gaze),
                "ms_ssim": ms_ssim(produced, target_image),
                "l1": l1(produced, target_image),
                "mixed_rec": mixed_rec_loss(produced, target_image, alpha),
            }
            if feature_files is not None:
                metrics["id_similarity"] = identity_similarity(
                    gen_feats.rows[index], tgt_feats.rows[index]
                )
        except GazekitError as exc:
            if failures is None:
                raise
            failures.append({"row": f"{src.subject}/{src.image}#{index}", "reason": str(exc)})
            continue
        records.append(
            EvalRecord(
                subject=src.subject,
                source_image=src.image,
                source_head=src.head,
                source_gaze=src.gaze,
                target_head=tgt.head,
                target_gaze=tgt.gaze,
                estimated_head=est_head,
                estimated_gaze=est_gaze,
                target_angle_deg=math.degrees(
                    disk_distance(
                        tgt.gaze if pattern is RedirectPattern.GAZE_ONLY else tgt.head,
                        FRONTAL,
                    )
                ),
                metrics=metrics,
            )
        )
    if run_metrics is not None and feature_files is not None:
        run_metrics["fid"] = fid(gen_feats, tgt_feats)
    return records


# ---------------------------------------------------------------------------
# reports

_RECORD_COLUMNS = [
    "subject",
    "source_image",
    "src_head_pitch",
    "src_head_yaw",
    "src_gaze_pitch",
    "src_gaze_yaw",
    "tgt_head_pitch",
    "tgt_head_yaw",
    "tgt_gaze_pitch",
    "tgt_gaze_yaw",
    "est_head_pitch",
    "est_head_yaw",
    "est_gaze_pitch",
    "est_gaze_yaw",
    "target_angle_deg",
]


def _record_row(record: EvalRecord, metric_keys: list[str]) -> list[str]:
    fmt = lambda x: format(float(x), ".17g")  # noqa: E731
    row = [
        record.subject,
        record.source_image,
        fmt(record.source_head.pitch),
        fmt(record.source_head.yaw),
        fmt(record.source_gaze.pitch),
        fmt(record.source_gaze.yaw),
        fmt(record.target_head.pitch),
        fmt(record.target_head.yaw),
        fmt(record.target_gaze.pitch),
        fmt(record.target_gaze.yaw),
        fmt(record.estimated_head.pitch),
        fmt(record.estimated_head.yaw),
        fmt(record.estimated_gaze.pitch),
        fmt(record.estimated_gaze.yaw),
        fmt(record.target_angle_deg),
    ]
    row.extend(fmt(record.metrics[k]) for k in metric_keys)
    return row


@dataclass
class Report:
    summary: dict
    bins: list[dict]
    records: list[EvalRecord]
    metric_keys: list[str]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(
            json.dumps(self.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        with open(out / "records.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_RECORD_COLUMNS + self.metric_keys)
            for record in self.records:
                writer.writerow(_record_row(record, self.metric_keys))
        with open(out / "bins.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_start_deg", "count", "mean_head_err", "mean_gaze_err"])
            for row in self.bins:
                writer.writerow(
                    [
                        format(row["bin_start_deg"], ".17g"),
                        row["count"],
                        format(row["mean_head_err"], ".17g"),
                        format(row["mean_gaze_err"], ".17g"),
                    ]
                )


def report(records: list[EvalRecord], bin_width_deg: float = 10.0) -> Report:
    """Aggregate records into summary means and per-target-angle bins.

    Records are sorted canonically first so the output is identical however
    the records were produced. Empty bins report zero means.
    """
    if not records:
        raise EmptyRun("no records to report")
    if bin_width_deg <= 0:
        raise ValueError("bin width must be positive")
    metric_keys = sorted(records[0].metrics)
    for record in records:
        if sorted(record.metrics) != metric_keys:
            raise ValueError("records carry inconsistent metric sets")
    ordered = sorted(records, key=lambda r: _record_row(r, metric_keys))

    means = {
        key: float(np.mean([r.metrics[key] for r in ordered])) for key in metric_keys
    }
    n_bins = int(math.floor(max(r.target_angle_deg for r in ordered) / bin_width_deg)) + 1
    bins = []
    for b in range(n_bins):
        lo = b * bin_width_deg
        members = [r for r in ordered if lo <= r.target_angle_deg < lo + bin_width_deg]
        bins.append(
            {
                "bin_start_deg": lo,
                "count": len(members),
                "mean_head_err": float(
                    np.mean([r.metrics["head_err_deg"] for r in members])
                )
                if members
                else 0.0,
                "mean_gaze_err": float(
                    np.mean([r.metrics["gaze_err_deg"] for r in members])
                )
                if members
                else 0.0,
            }
        )
    summary = {
        "n_records": len(ordered),
        "bin_width_deg": bin_width_deg,
        "means": means,
    }
    return Report(summary=summary, bins=bins, records=ordered, metric_keys=metric_keys)


def load_report(report_dir: str | Path) -> tuple[dict, list[dict]]:
    out = Path(report_dir)
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    bins = []
    with open(out / "bins.csv", "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            bins.append(
                {
                    "bin_start_deg": float(row["bin_start_deg"]),
                    "count": int(row["count"]),
                    "mean_head_err": float(row["mean_head_err"]),
                    "mean_gaze_err": float(row["mean_gaze_err"]),
                }
            )
    return summary, bins


def diff_reports(baseline_dir: str | Path, treatment_dir: str | Path) -> dict:
    """Error-reduction table: treatment minus baseline (negative = improved)."""
    base_summary, base_bins = load_report(baseline_dir)
    treat_summary, treat_bins = load_report(treatment_dir)
    keys = sorted(set(base_summary["means"]) & set(treat_summary["means"]))
    mean_diff = {k: treat_summary["means"][k] - base_summary["means"][k] for k in keys}
    base_by_start = {b["bin_start_deg"]: b for b in base_bins}
    treat_by_start = {b["bin_start_deg"]: b for b in treat_bins}
    starts = sorted(set(base_by_start) | set(treat_by_start))
    empty = {"count": 0, "mean_head_err": 0.0, "mean_gaze_err": 0.0}
    bin_diffs = []
    for start in starts:
        b = base_by_start.get(start, empty)
        t = treat_by_start.get(start, empty)
        bin_diffs.append(
            {
                "bin_start_deg": start,
                "baseline_count": b["count"],
                "treatment_count": t["count"],
                "head_err_reduction": t["mean_head_err"] - b["mean_head_err"],
                "gaze_err_reduction": t["mean_gaze_err"] - b["mean_gaze_err"],
            }
        )
    return {"means_reduction": mean_diff, "bins": bin_diffs}


class ExternalEstimator:
    """Adapter that labels images by spawning an external command.

    The command is invoked as ``<command> --manifest <in.jsonl> --out
    <out.jsonl>``; it must write one manifest row per input row (same
    paths) carrying its head/gaze estimates. Images are exchanged as PNG
    files in a scratch directory.
    """

    def __init__(self, command: str | list[str]):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)

    def estimate(self, image, sidecar=None) -> tuple[Direction, Direction]:
        with tempfile.TemporaryDirectory(prefix="gazekit-est-") as tmp:
            tmp_path = Path(tmp)
            write_image(tmp_path / "sample.png", image)
            with ManifestWriter(tmp_path / "in.jsonl") as writer:
                writer.write(
                    ManifestEntry(
                        subject="query",
                        image=str(tmp_path / "sample.png"),
                        mesh="-",
                        head=Direction(0.0, 0.0),
                        gaze=Direction(0.0, 0.0),
                    )
                )
            argv = self.command + [
                "--manifest",
                str(tmp_path / "in.jsonl"),
                "--out",
                str(tmp_path / "out.jsonl"),
            ]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise ExternalToolError(
                    f"estimator command failed ({proc.returncode}): {proc.stderr.strip()}"
                )
            rows = read_manifest(tmp_path / "out.jsonl")
            if len(rows) != 1:
                raise ExternalToolError(f"estimator wrote {len(rows)} rows, expected 1")
            return rows[0].head, rows[0].gaze

"""Command-line interface.

One executable, subcommand per pipeline stage. Results go to files or
standard output (JSON); progress and warnings go to standard error. All
randomness flows from ``--seed``. Exit codes: 0 success, 1 usage error,
2 input/parse error, 3 partial failure (run finished, some samples failed,
report written), 4 internal error.

Angles in files are always radians; command-line angle arguments and
printed angles are radians too unless ``--degrees`` is given. Disk radii
(``--radius``) are degrees everywhere, matching the run-config key.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import io as gio
from .augment import AugmentConfig, SamplingMode, run_augmentation
from .camnorm import HeadPose, NormalizationSpec, normalize_sample
from .errors import ConfigError, FormatError, GazekitError, MissingTarget
from .evalharness import (
    ExternalEstimator,
    ProtocolConfig,
    diff_reports,
    redirect_to_angle,
    redirect_to_image,
    report,
)
from .geometry import Direction, sample_disk_direction
from .metrics import (
    FeatureSet,
    LossWeights,
    fid,
    ms_ssim,
    redirection_error,
    total_loss,
)
from .raster import ImageBuffer
from .redirect import (
    IdentityRedirector,
    MeshRedirector,
    OracleEstimator,
    load_latents,
    parse_pattern,
    redirect as redirect_state,
    save_latents,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_PARTIAL = 3
EXIT_INTERNAL = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract says 1
        raise _UsageError(message)


def _fmt_angle(value: float, degrees: bool) -> str:
    return format(math.degrees(value) if degrees else value, ".17g")


def _parse_direction(text: str, degrees: bool) -> Direction:
    parts = text.split(",")
    if len(parts) != 2:
        raise _UsageError(f"expected 'pitch,yaw', got {text!r}")
    try:
        pitch, yaw = (float(p) for p in parts)
    except ValueError:
        raise _UsageError(f"expected two numbers in {text!r}") from None
    if degrees:
        pitch, yaw = math.radians(pitch), math.radians(yaw)
    return Direction(pitch, yaw)


def _load_config(args) -> gio.RunConfig | None:
    if getattr(args, "config", None):
        return gio.read_run_config(args.config)
    return None


def _pick(cli_value, config_value, default):
    if cli_value is not None:
        return cli_value
    if config_value is not None:
        return config_value
    return default


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_jobs(jobs: int | None) -> int:
    if jobs is not None:
        return max(1, jobs)
    import os

    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_normalize(args) -> int:
    cfg = _load_config(args)
    if cfg is None or cfg.camera is None:
        raise ConfigError("normalize needs --config with a [camera] section")
    spec = cfg.normalization
    rows = gio.read_raw_manifest(args.manifest)
    out_root = Path(args.out)
    (out_root / "images").mkdir(parents=True, exist_ok=True)
    image_root = Path(args.image_root)
    entries = []
    rotations = []
    failures = []
    for idx, row in enumerate(rows):
        try:
            image = gio.read_image(image_root / row.image)
            head = HeadPose(rotation=row.head_rotation, translation=row.face_center)
            warped, head_dir, gaze_dir, rot = normalize_sample(
                image, cfg.camera, head, row.gaze_vector, row.face_center, spec
            )
            rel = f"images/{row.subject}_{idx:05d}_{Path(row.image).stem}.png"
            gio.write_image(out_root / rel, warped)
            entries.append(
                gio.ManifestEntry(
                    subject=row.subject,
                    image=rel,
                    mesh=row.mesh,
                    head=head_dir,
                    gaze=gaze_dir,
                    camera=row.camera,
                )
            )
            rotations.append({"image": rel, "r_n": [float(v) for v in rot.ravel()]})
        except GazekitError as exc:
            failures.append({"row": f"{row.subject}/{row.image}", "reason": str(exc)})
            _progress(f"normalize: skipping {row.subject}/{row.image}: {exc}")
    gio.write_manifest(out_root / "manifest.jsonl", entries)
    with open(out_root / "rotations.jsonl", "w", encoding="utf-8") as fh:
        for rec in rotations:
            fh.write(json.dumps(rec) + "\n")
    report_payload = {"planned": len(rows), "succeeded": len(entries), "failures": failures}
    (out_root / "report.json").write_text(
        json.dumps(report_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _progress(f"normalize: {len(entries)}/{len(rows)} samples written to {out_root}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _cmd_augment(args) -> int:
    cfg = _load_config(args)
    base = cfg.augment if cfg else AugmentConfig()
    aug = AugmentConfig(
        mode=SamplingMode(args.mode) if args.mode else base.mode,
        radius_deg=_pick(args.radius, None if cfg is None else base.radius_deg, 60.0),
        targets_per_source=_pick(
            args.targets, None if cfg is None else base.targets_per_source, 10
        ),
        sources_per_subject=_pick(
            args.sources, None if cfg is None else base.sources_per_subject, 30
        ),
        min_subject_samples=_pick(
            args.min_samples, None if cfg is None else base.min_subject_samples, 30
        ),
        seed=_pick(args.seed, None if cfg is None else base.seed, 0),
        background_mode=args.background or base.background_mode,
        background_pool=args.pool or base.background_pool,
        target_center=base.target_center,
    )
    spec = cfg.normalization if cfg else NormalizationSpec()
    manifest = gio.read_manifest(args.manifest)
    _, render_report = run_augmentation(
        manifest,
        aug,
        args.out,
        norm_spec=spec,
        mesh_root=args.mesh_root,
        jobs=_resolve_jobs(args.jobs),
    )
    _progress(
        f"augment: planned {render_report.planned}, succeeded {render_report.succeeded}, "
        f"failed {render_report.failed}"
    )
    return EXIT_PARTIAL if render_report.failed else EXIT_OK


def _cmd_sample_targets(args) -> int:
    center = _parse_direction(args.center, args.degrees)
    rng = np.random.Generator(np.random.PCG64(args.seed if args.seed is not None else 0))
    radius = math.radians(args.radius if args.radius is not None else 60.0)
    for _ in range(args.n):
        d = sample_disk_direction(center, radius, rng)
        print(
            "{"
            + f'"pitch": {_fmt_angle(d.pitch, args.degrees)}, '
            + f'"yaw": {_fmt_angle(d.yaw, args.degrees)}'
            + "}"
        )
    return EXIT_OK


def _cmd_redirect(args) -> int:
    state = load_latents(args.latents)
    pattern = parse_pattern(args.pattern)
    target_head = (
        _parse_direction(args.target_head, args.degrees) if args.target_head else None
    )
    target_gaze = (
        _parse_direction(args.target_gaze, args.degrees) if args.target_gaze else None
    )
    out_state = redirect_state(state, pattern, target_head=target_head, target_gaze=target_gaze)
    save_latents(args.out, out_state)
    _progress(f"redirect: wrote {args.out}")
    return EXIT_OK


def _make_estimator(spec_text: str):
    if spec_text == "oracle":
        return OracleEstimator()
    if spec_text.startswith("external:"):
        return ExternalEstimator(spec_text[len("external:") :])
    raise _UsageError(f"unknown estimator {spec_text!r} (use 'oracle' or 'external:<cmd>')")


def _make_redirector(kind: str, spec: NormalizationSpec, mesh_root):
    if kind == "identity":
        return IdentityRedirector()
    if kind == "mesh":
        background = ImageBuffer.full(spec.out_width, spec.out_height, (0.5, 0.5, 0.5))
        return MeshRedirector(spec.intrinsics(), background, mesh_root=mesh_root)
    raise _UsageError(f"unknown redirector {kind!r} (use 'mesh' or 'identity')")


def _cmd_eval_angle(args) -> int:
    cfg = _load_config(args)
    base = cfg.protocol if cfg else ProtocolConfig()
    protocol = ProtocolConfig(
        targets_per_source=_pick(
            args.targets, None if cfg is None else base.targets_per_source, 10
        ),
        radius_deg=_pick(args.radius, None if cfg is None else base.radius_deg, 60.0),
        sources_per_subject=_pick(
            args.sources, None if cfg is None else base.sources_per_subject, 20
        ),
        pattern=parse_pattern(args.pattern) if args.pattern else base.pattern,
        seed=_pick(args.seed, None if cfg is None else base.seed, 0),
    )
    spec = cfg.normalization if cfg else NormalizationSpec()
    manifest = gio.read_manifest(args.manifest)
    failures: list = []
    records = redirect_to_angle(
        manifest,
        _make_redirector(args.redirector, spec, args.mesh_root),
        _make_estimator(args.estimator),
        protocol,
        image_root=args.image_root,
        failures=failures,
        jobs=_resolve_jobs(args.jobs),
    )
    rep = report(records, bin_width_deg=args.bin_width)
    rep.summary["failures"] = len(failures)
    rep.summary["pattern"] = protocol.pattern.value
    rep.write(args.out)
    _progress(
        f"eval-angle: {len(records)} records, {len(failures)} failures; "
        f"mean head {rep.summary['means']['head_err_deg']:.4f} deg, "
        f"mean gaze {rep.summary['means']['gaze_err_deg']:.4f} deg"
    )
    return EXIT_PARTIAL if failures else EXIT_OK


class _SavingRedirector:
    """Wraps a redirector and persists every produced image in call order."""

    def __init__(self, inner, out_dir: Path):
        self.inner = inner
        self.out_dir = out_dir
        self.rows: list[gio.ManifestEntry] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def redirect(self, request):
        result = self.inner.redirect(request)
        rel = f"gen_{len(self.rows):05d}.png"
        gio.write_image(self.out_dir / rel, result.image)
        self.rows.append(
            gio.ManifestEntry(
                subject="generated",
                image=str(self.out_dir / rel),
                mesh="-",
                head=result.head,
                gaze=result.gaze,
            )
        )
        return result


def _cmd_eval_image(args) -> int:
    cfg = _load_config(args)
    spec = cfg.normalization if cfg else NormalizationSpec()
    sources = gio.read_manifest(args.source_manifest)
    targets = gio.read_manifest(args.target_manifest)
    if len(sources) != len(targets):
        raise FormatError(
            f"source/target manifests differ in length: {len(sources)} vs {len(targets)}"
        )
    pairs = list(zip(sources, targets))

    feature_files = None
    if bool(args.features_generated) != bool(args.features_target):
        raise _UsageError("--features-generated and --features-target go together")
    if args.features_generated:
        gen_rows, _ = gio.read_features(args.features_generated)
        tgt_rows, _ = gio.read_features(args.features_target)
        feature_files = (FeatureSet(gen_rows), FeatureSet(tgt_rows))
    else:
        _progress(
            "eval-image: no feature files supplied; identity similarity and FID "
            "will be absent from the report"
        )

    redirector = _make_redirector(args.redirector, spec, args.mesh_root)
    if args.save_images:
        redirector = _SavingRedirector(redirector, Path(args.save_images))

    failures: list = []
    run_metrics: dict = {}
    records = redirect_to_image(
        pairs,
        redirector,
        _make_estimator(args.estimator),
        parse_pattern(args.pattern) if args.pattern else ProtocolConfig().pattern,
        alpha=args.alpha if args.alpha is not None else 0.84,
        image_root=args.image_root,
        feature_files=feature_files,
        run_metrics=run_metrics,
        failures=failures,
    )
    rep = report(records, bin_width_deg=args.bin_width)
    rep.summary["failures"] = len(failures)
    rep.summary.update({k: v for k, v in run_metrics.items()})
    rep.write(args.out)
    if isinstance(redirector, _SavingRedirector):
        gio.write_manifest(Path(args.save_images) / "gen_manifest.jsonl", redirector.rows)
    _progress(f"eval-image: {len(records)} records, {len(failures)} failures")
    return EXIT_PARTIAL if failures else EXIT_OK


def _cmd_metric(args) -> int:
    if args.kind == "fid":
        a_rows, _ = gio.read_features(args.inputs[0])
        b_rows, _ = gio.read_features(args.inputs[1])
        a, b = FeatureSet(a_rows), FeatureSet(b_rows)
        payload = {
            "metric": "fid",
            "value": fid(a, b),
            "n": len(a) + len(b),
            "params": {"dim": a.dim},
        }
    elif args.kind == "msssim":
        x = gio.read_image(args.inputs[0])
        y = gio.read_image(args.inputs[1])
        payload = {
            "metric": "msssim",
            "value": ms_ssim(x, y, scales=args.scales),
            "n": 1,
            "params": {"width": x.width, "height": x.height, "scales": args.scales},
        }
    elif args.kind == "angular":
        if not args.target or not args.estimated:
            raise _UsageError("metric angular needs --target and --estimated")
        target = _parse_direction(args.target, args.degrees)
        estimated = _parse_direction(args.estimated, args.degrees)
        payload = {
            "metric": "angular",
            "value": redirection_error(target, estimated),
            "n": 1,
            "params": {"unit": "degrees"},
        }
    else:  # total-loss
        weights = LossWeights(
            alpha=args.alpha if args.alpha is not None else 0.84,
            lambda_id=args.lambda_id if args.lambda_id is not None else 2.0,
            lambda_rec=args.lambda_rec if args.lambda_rec is not None else 200.0,
        )
        payload = {
            "metric": "total-loss",
            "value": total_loss(args.sted, args.id_loss, args.rec_loss, weights),
            "n": 1,
            "params": {"lambda_id": weights.lambda_id, "lambda_rec": weights.lambda_rec},
        }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_report_diff(args) -> int:
    diff = diff_reports(args.baseline, args.treatment)
    text = json.dumps(diff, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="run seed (default: 0)")
    parser.add_argument("--config", default=None, help="run configuration file")
    parser.add_argument(
        "--degrees",
        action="store_true",
        help="read/print command-line angles in degrees instead of radians",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="gazekit", description=__doc__, allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("normalize", help="warp samples to the virtual camera")
    p.add_argument("--manifest", required=True, help="raw manifest (JSONL)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--image-root", default=".", help="root for image paths (default: .)")
    _add_common(p)
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("augment", help="rotate faces to disk-sampled targets and render")
    p.add_argument("--manifest", required=True, help="normalized manifest (JSONL)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mesh-root", default=".", help="root for mesh paths (default: .)")
    p.add_argument(
        "--mode", choices=["head", "gaze"], default=None, help="sampling mode (default: head)"
    )
    p.add_argument("--radius", type=float, default=None, help="disk radius, degrees (default: 60)")
    p.add_argument("--targets", type=int, default=None, help="targets per source (default: 10)")
    p.add_argument("--sources", type=int, default=None, help="sources per subject (default: 30)")
    p.add_argument(
        "--min-samples",
        type=int,
        default=None,
        help="minimum samples for a subject to be kept (default: 30)",
    )
    p.add_argument(
        "--background",
        choices=["solid", "image-pool"],
        default=None,
        help="background mode (default: solid)",
    )
    p.add_argument("--pool", default=None, help="background image directory")
    p.add_argument(
        "--jobs", type=int, default=None, help="worker count (default: all cores)"
    )
    _add_common(p)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("sample-targets", help="draw directions from the angular disk")
    p.add_argument("--n", type=int, required=True, help="number of draws")
    p.add_argument("--radius", type=float, default=None, help="disk radius, degrees (default: 60)")
    p.add_argument(
        "--center", default="0,0", help="disk center as 'pitch,yaw' (default: 0,0)"
    )
    _add_common(p)
    p.set_defaults(func=_cmd_sample_targets)

    p = sub.add_parser("redirect", help="rotate a latent dump to new targets")
    p.add_argument("--latents", required=True, help="input latent dump (GZFT)")
    p.add_argument("--out", required=True, help="output latent dump (GZFT)")
    p.add_argument(
        "--pattern",
        choices=["both", "gaze-only", "head-only"],
        default="both",
        help="redirection pattern (default: both)",
    )
    p.add_argument("--target-head", default=None, help="target head as 'pitch,yaw'")
    p.add_argument("--target-gaze", default=None, help="target gaze as 'pitch,yaw'")
    _add_common(p)
    p.set_defaults(func=_cmd_redirect)

    def add_eval_common(p):
        p.add_argument("--out", required=True, help="report directory")
        p.add_argument(
            "--redirector",
            choices=["mesh", "identity"],
            default="mesh",
            help="redirector implementation (default: mesh)",
        )
        p.add_argument(
            "--estimator",
            default="oracle",
            help="'oracle' or 'external:<command>' (default: oracle)",
        )
        p.add_argument(
            "--pattern",
            choices=["both", "gaze-only", "head-only"],
            default=None,
            help="redirection pattern (default: both)",
        )
        p.add_argument("--image-root", default=".", help="root for image paths (default: .)")
        p.add_argument("--mesh-root", default=".", help="root for mesh paths (default: .)")
        p.add_argument(
            "--bin-width", type=float, default=10.0, help="report bin width, degrees (default: 10)"
        )

    p = sub.add_parser("eval-angle", help="redirect-to-angle protocol")
    p.add_argument("--manifest", required=True, help="source manifest (JSONL)")
    add_eval_common(p)
    p.add_argument("--targets", type=int, default=None, help="targets per source (default: 10)")
    p.add_argument("--sources", type=int, default=None, help="sources per subject (default: 20)")
    p.add_argument("--radius", type=float, default=None, help="disk radius, degrees (default: 60)")
    p.add_argument(
        "--jobs", type=int, default=None, help="worker count (default: all cores)"
    )
    _add_common(p)
    p.set_defaults(func=_cmd_eval_angle)

    p = sub.add_parser("eval-image", help="redirect-to-image protocol")
    p.add_argument("--source-manifest", required=True, help="source rows (JSONL)")
    p.add_argument("--target-manifest", required=True, help="paired target rows (JSONL)")
    add_eval_common(p)
    p.add_argument(
        "--alpha", type=float, default=None, help="mixed reconstruction weight (default: 0.84)"
    )
    p.add_argument("--features-generated", default=None, help="GZFT features of generated images")
    p.add_argument("--features-target", default=None, help="GZFT features of target images")
    p.add_argument("--save-images", default=None, help="directory to save produced images")
    _add_common(p)
    p.set_defaults(func=_cmd_eval_image)

    p = sub.add_parser("metric", help="compute a single metric and print JSON")
    msub = p.add_subparsers(dest="kind", parser_class=_Parser)

    m = msub.add_parser("fid", help="Fréchet distance between two feature files")
    m.add_argument("inputs", nargs=2, metavar="GZFT", help="two feature files")
    _add_common(m)
    m.set_defaults(func=_cmd_metric, kind="fid")

    m = msub.add_parser("msssim", help="multi-scale SSIM between two PNGs")
    m.add_argument("inputs", nargs=2, metavar="PNG", help="two images")
    m.add_argument(
        "--scales", type=int, default=None, help="scale count (default: auto, up to 5)"
    )
    _add_common(m)
    m.set_defaults(func=_cmd_metric, kind="msssim")

    m = msub.add_parser("angular", help="angular error between two directions, degrees")
    m.add_argument("--target", required=True, help="target direction 'pitch,yaw'")
    m.add_argument("--estimated", required=True, help="estimated direction 'pitch,yaw'")
    _add_common(m)
    m.set_defaults(func=_cmd_metric, kind="angular")

    m = msub.add_parser("total-loss", help="weighted training objective")
    m.add_argument("--sted", type=float, required=True, help="externally supplied base loss")
    m.add_argument("--id-loss", type=float, required=True, help="identity loss term")
    m.add_argument("--rec-loss", type=float, required=True, help="reconstruction loss term")
    m.add_argument("--alpha", type=float, default=None, help="mixing weight (default: 0.84)")
    m.add_argument(
        "--lambda-id", type=float, default=None, help="identity loss weight (default: 2)"
    )
    m.add_argument(
        "--lambda-rec", type=float, default=None, help="reconstruction loss weight (default: 200)"
    )
    _add_common(m)
    m.set_defaults(func=_cmd_metric, kind="total-loss")

    p = sub.add_parser("report-diff", help="difference two report bundles (treatment - baseline)")
    p.add_argument("--baseline", required=True, help="baseline report directory")
    p.add_argument("--treatment", required=True, help="treatment report directory")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    _add_common(p)
    p.set_defaults(func=_cmd_report_diff)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingTarget as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GazekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

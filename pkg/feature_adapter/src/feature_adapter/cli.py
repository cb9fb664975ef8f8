"""`gaze-extract`: manifest or directory in, GZFT feature file out."""

from __future__ import annotations

import argparse
import sys

from .extract import AdapterError, ExtractorSpec, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaze-extract",
        description="Extract per-image feature vectors and write a GZFT feature file.",
    )
    parser.add_argument(
        "--backbone",
        required=True,
        help="one of: grid-stats, identity-recognition, inception-pool",
    )
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", help="JSONL manifest; rows are read in order")
    group.add_argument("--directory", help="directory of PNGs, processed in sorted order")
    parser.add_argument("--out", required=True, help="output feature file (GZFT)")
    parser.add_argument("--batch", type=int, default=16, help="batch size (default: 16)")
    parser.add_argument("--weights", default=None, help="local weights file for torch backbones")
    parser.add_argument("--image-root", default=".", help="root for manifest image paths")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExtractorSpec(
            backbone=args.backbone,
            output=args.out,
            manifest=args.manifest,
            directory=args.directory,
            batch_size=args.batch,
            weights=args.weights,
            image_root=args.image_root,
        )
        count = extract(spec)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} feature rows to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

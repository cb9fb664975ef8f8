"""Feature extraction over a manifest or an image directory.

One feature row per input row, in input order: alignment with the
manifest is what downstream identity/FID evaluation keys on, so a failed
image aborts the run naming its row index rather than substituting
anything. Output lands atomically (temp file + rename).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class AdapterError(Exception):
    """Extraction cannot proceed; the message says what to fix."""


@dataclass(frozen=True)
class ExtractorSpec:
    backbone: str
    output: str
    manifest: str | None = None
    directory: str | None = None
    batch_size: int = 16
    weights: str | None = None
    image_root: str = "."

    def __post_init__(self):
        if bool(self.manifest) == bool(self.directory):
            raise AdapterError("exactly one of manifest/directory must be given")
        if self.batch_size < 1:
            raise AdapterError(f"batch size must be >= 1, got {self.batch_size}")


def _image_list(spec: ExtractorSpec) -> list[Path]:
    root = Path(spec.image_root)
    if spec.manifest:
        paths: list[Path] = []
        with open(spec.manifest, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                text = line.strip()
                if not text:
                    continue
                try:
                    row = json.loads(text)
                    image = row["image"]
                except (json.JSONDecodeError, TypeError, KeyError) as exc:
                    raise AdapterError(
                        f"manifest line {line_no} has no readable 'image' field: {exc}"
                    ) from exc
                paths.append(root / image)
        return paths
    files = sorted(Path(spec.directory).glob("*.png"))
    if not files:
        raise AdapterError(f"no PNG files found in {spec.directory}")
    return files


def _load_image(path: Path, row_index: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise AdapterError(f"row {row_index}: cannot read image {path}: {exc}") from exc


def extract(spec: ExtractorSpec) -> int:
    """Extract one feature row per input image; returns the row count."""
    from .backbones import make_backbone
    from .gzft import write_gzft

    backbone = make_backbone(spec.backbone, spec.weights)
    paths = _image_list(spec)
    if not paths:
        raise AdapterError("input list is empty")

    rows: list[np.ndarray] = []
    for start in range(0, len(paths), spec.batch_size):
        batch_paths = paths[start : start + spec.batch_size]
        batch = [
            _load_image(path, start + offset) for offset, path in enumerate(batch_paths)
        ]
        features = np.asarray(backbone(batch), dtype=np.float32)
        if features.shape[0] != len(batch):
            raise AdapterError(
                f"backbone returned {features.shape[0]} rows for a batch of {len(batch)}"
            )
        if not np.isfinite(features).all():
            bad = int(np.argwhere(~np.isfinite(features).all(axis=1))[0][0])
            raise AdapterError(f"row {start + bad}: backbone produced non-finite values")
        rows.append(features)

    stacked = np.vstack(rows)
    out_path = Path(spec.output)
    tmp_path = out_path.with_name(out_path.name + ".tmp")
    write_gzft(tmp_path, stacked)
    os.replace(tmp_path, out_path)
    return int(stacked.shape[0])

"""Minimal GZFT writer.

Layout: magic "GZFT", little-endian u32 version (=1) / row count / dim,
then count x dim float32 values row-major. Deliberately tiny so any
ecosystem can emit the format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def write_gzft(path: str | Path, rows: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(rows, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError(f"feature rows must be 2-D, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("feature values must be finite")
    with open(path, "wb") as fh:
        fh.write(b"GZFT")
        fh.write(struct.pack("<III", 1, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())

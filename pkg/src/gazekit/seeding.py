"""Deterministic per-sample random streams.

Each work unit gets its own generator derived from the run seed and the
unit's identity by a stable hash, so execution order and worker count can
never change what a sample draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def sample_stream(seed: int, *parts) -> np.random.Generator:
    key = "|".join([str(int(seed)), *map(str, parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))

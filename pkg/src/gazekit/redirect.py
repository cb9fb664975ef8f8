"""Latent-space redirection machinery.

Each controllable factor (head, gaze, ...) is a block of 3-vectors plus a
pseudo-condition direction. Redirection rotates factor embeddings with the
rotation built from the (source condition, target) direction pair and
updates the condition by the same rotation, so condition/embedding
consistency is an invariant. Neural encoders/decoders stay external behind
small interfaces; shipped implementations are oracle stubs that carry
ground-truth labels through a sidecar channel, plus a mesh-based redirector
that rotates and re-renders an actual 3D face.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from .errors import FormatError, MissingTarget
from .geometry import Direction, direction_to_vector, rotation_between, vector_to_direction

REQUIRED_FACTORS = ("head", "gaze")


@dataclass(frozen=True)
class FactorEmbedding:
    """One factor's embedding: n rows of 3-vectors."""

    rows: np.ndarray  # (n, 3)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"embedding rows must be (n, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("embedding rows must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "rows", arr)

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class Factor:
    """Embedding plus the pseudo-condition it encodes."""

    embedding: FactorEmbedding
    condition: Direction


@dataclass(frozen=True)
class LatentState:
    """Identity code plus per-factor embeddings; 'head' and 'gaze' required."""

    id_code: np.ndarray
    factors: Mapping[str, Factor]

    def __post_init__(self):
        code = self.id_code
        canonical = (
            isinstance(code, np.ndarray)
            and code.dtype == np.float64
            and code.ndim == 1
            and code.flags.c_contiguous
            and not code.flags.writeable
        )
        if not canonical:
            code = np.ascontiguousarray(np.asarray(code, dtype=np.float64).ravel())
            code.flags.writeable = False
        object.__setattr__(self, "id_code", code)
        factors = dict(self.factors)
        missing = [name for name in REQUIRED_FACTORS if name not in factors]
        if missing:
            raise ValueError(f"latent state is missing factors {missing}")
        object.__setattr__(self, "factors", factors)


class RedirectPattern(enum.Enum):
    """Which factors the redirection rotation is applied to.

    BOTH uses the head-pair rotation on head and gaze embeddings together;
    GAZE_ONLY rotates the gaze factor by the gaze-pair rotation, keeping the
    head; HEAD_ONLY rotates the head factor by the head-pair rotation,
    keeping the gaze.
    """

    BOTH = "both"
    GAZE_ONLY = "gaze-only"
    HEAD_ONLY = "head-only"


def parse_pattern(text: str) -> RedirectPattern:
    try:
        return RedirectPattern(text)
    except ValueError:
        valid = ", ".join(p.value for p in RedirectPattern)
        raise ValueError(f"unknown pattern {text!r}; expected one of {valid}") from None


def transform_embedding(
    z: FactorEmbedding, c_src: Direction, c_tgt: Direction
) -> FactorEmbedding:
    """Rotate every embedding row by the source-to-target condition rotation."""
    rot = rotation_between(c_src, c_tgt)
    return FactorEmbedding(z.rows @ rot.T)


def _rotate_factor(factor: Factor, rot: np.ndarray) -> Factor:
    condition = vector_to_direction(rot @ direction_to_vector(factor.condition))
    return Factor(FactorEmbedding(factor.embedding.rows @ rot.T), condition)


def redirect(
    state: LatentState,
    pattern: RedirectPattern,
    target_head: Direction | None = None,
    target_gaze: Direction | None = None,
) -> LatentState:
    """Retarget a latent state; untouched factors pass through unchanged.

    BOTH and HEAD_ONLY require ``target_head``; GAZE_ONLY requires
    ``target_gaze``. The input state is never mutated.
    """
    factors = dict(state.factors)
    if pattern in (RedirectPattern.BOTH, RedirectPattern.HEAD_ONLY):
        if target_head is None:
            raise MissingTarget(f"pattern {pattern.value} requires a head target")
        rot = rotation_between(factors["head"].condition, target_head)
        factors["head"] = _rotate_factor(factors["head"], rot)
        if pattern is RedirectPattern.BOTH:
            factors["gaze"] = _rotate_factor(factors["gaze"], rot)
    else:  # GAZE_ONLY
        if target_gaze is None:
            raise MissingTarget("pattern gaze-only requires a gaze target")
        rot = rotation_between(factors["gaze"].condition, target_gaze)
        factors["gaze"] = _rotate_factor(factors["gaze"], rot)
    return LatentState(id_code=state.id_code, factors=factors)


# ---------------------------------------------------------------------------
# pluggable interfaces


class Encoder(Protocol):
    def encode(self, image, sidecar: Mapping | None = None) -> LatentState: ...


class Decoder(Protocol):
    def decode(self, state: LatentState): ...


class Estimator(Protocol):
    def estimate(self, image, sidecar: Mapping | None = None) -> tuple[Direction, Direction]: ...


@dataclass(frozen=True)
class RedirectRequest:
    """One redirection job: a source sample and the pattern targets."""

    image: "ImageBuffer"
    head: Direction
    gaze: Direction
    pattern: RedirectPattern
    target_head: Direction | None = None
    target_gaze: Direction | None = None
    mesh_path: str | None = None


@dataclass(frozen=True)
class RedirectResult:
    """Produced image plus the labels the redirector asserts for it."""

    image: "ImageBuffer"
    head: Direction
    gaze: Direction

    def sidecar(self) -> dict:
        return {"head": self.head, "gaze": self.gaze}


class Redirector(Protocol):
    def redirect(self, request: RedirectRequest) -> RedirectResult: ...


def expected_labels(
    head: Direction,
    gaze: Direction,
    pattern: RedirectPattern,
    target_head: Direction | None = None,
    target_gaze: Direction | None = None,
) -> tuple[Direction, Direction]:
    """Ground-truth (head, gaze) an ideal redirector produces for a request.

    BOTH carries the gaze along with the head rotation; the single-factor
    patterns pin the untouched label at its source value.
    """
    if pattern is RedirectPattern.BOTH:
        if target_head is None:
            raise MissingTarget("pattern both requires a head target")
        rot = rotation_between(head, target_head)
        return target_head, vector_to_direction(rot @ direction_to_vector(gaze))
    if pattern is RedirectPattern.HEAD_ONLY:
        if target_head is None:
            raise MissingTarget("pattern head-only requires a head target")
        return target_head, gaze
    if target_gaze is None:
        raise MissingTarget("pattern gaze-only requires a gaze target")
    return head, target_gaze


class OracleEncoder:
    """Stub encoder: stores the image in the identity code and builds factor
    embeddings whose first row equals the condition's direction vector."""

    def __init__(self, embedding_rows: int = 16):
        self.embedding_rows = embedding_rows

    def encode(self, image, sidecar: Mapping | None = None) -> LatentState:
        sidecar = sidecar or {}
        factors = {}
        for name in REQUIRED_FACTORS:
            condition = sidecar.get(name, Direction(0.0, 0.0))
            rows = np.zeros((self.embedding_rows, 3))
            rows[0] = direction_to_vector(condition)
            factors[name] = Factor(FactorEmbedding(rows), condition)
        code = np.concatenate(
            [np.array([image.height, image.width], dtype=np.float64), image.pixels.ravel()]
        )
        return LatentState(id_code=code, factors=factors)


class OracleDecoder:
    """Stub decoder: reconstructs the image an OracleEncoder stored."""

    def decode(self, state: LatentState):
        from .raster import ImageBuffer

        h, w = int(state.id_code[0]), int(state.id_code[1])
        pixels = state.id_code[2:].reshape(h, w, 3)
        return ImageBuffer(pixels)


class OracleEstimator:
    """Stub estimator: reads ground-truth labels from the sidecar channel."""

    def estimate(self, image, sidecar: Mapping | None = None) -> tuple[Direction, Direction]:
        if not sidecar or "head" not in sidecar or "gaze" not in sidecar:
            raise ValueError("oracle estimator needs 'head' and 'gaze' in the sidecar")
        return sidecar["head"], sidecar["gaze"]


class IdentityRedirector:
    """Baseline redirector: returns the source image with source labels."""

    def redirect(self, request: RedirectRequest) -> RedirectResult:
        return RedirectResult(image=request.image, head=request.head, gaze=request.gaze)


class MeshRedirector:
    """Redirects by rigidly rotating the sample's 3D face and re-rendering.

    The asserted labels follow the pattern contract exactly. The pixels are
    a rigid-motion approximation: BOTH is faithful, HEAD_ONLY re-renders the
    rotated head (the rigid mesh cannot hold gaze fixed), and GAZE_ONLY
    keeps the source rendering (the head stays, eyeballs cannot move).
    """

    def __init__(self, intrinsics, background, mesh_root: str | Path = "."):
        self.intrinsics = intrinsics
        self.background = background
        self.mesh_root = Path(mesh_root)

    def _load(self, request: RedirectRequest):
        from .camnorm import HeadPose
        from .facemesh import LabeledMesh
        from .geometry import rotation_from_direction
        from .io import read_mesh

        if request.mesh_path is None:
            raise FormatError("mesh redirector needs a mesh path on the request")
        mesh = read_mesh(self.mesh_root / request.mesh_path)
        head = HeadPose(
            rotation=rotation_from_direction(request.head), translation=mesh.face_center
        )
        return LabeledMesh(mesh=mesh, head=head, gaze_vector=direction_to_vector(request.gaze))

    def redirect(self, request: RedirectRequest) -> RedirectResult:
        from .facemesh import rotate_about_center
        from .raster import rasterize

        head_out, gaze_out = expected_labels(
            request.head,
            request.gaze,
            request.pattern,
            request.target_head,
            request.target_gaze,
        )
        if request.pattern is RedirectPattern.GAZE_ONLY:
            image = request.image
        else:
            labeled = self._load(request)
            rot = rotation_between(request.head, request.target_head)
            rotated = rotate_about_center(labeled, rot)
            image = rasterize(rotated.mesh, self.intrinsics, self.background)
        return RedirectResult(image=image, head=head_out, gaze=gaze_out)


# ---------------------------------------------------------------------------
# latent dump files (GZFT payload + JSON header)


def save_latents(path: str | Path, state: LatentState) -> None:
    """Dump a latent state to a feature file.

    Payload rows: identity code padded into rows of 3, then each factor's
    rows in header order; the JSON header records names, row counts and
    conditions.
    """
    from .io import write_features

    id_len = int(state.id_code.shape[0])
    id_rows = -(-id_len // 3)
    padded = np.zeros(id_rows * 3)
    padded[:id_len] = state.id_code
    blocks = [padded.reshape(-1, 3)]
    factors_meta = []
    for name in sorted(state.factors):
        factor = state.factors[name]
        blocks.append(factor.embedding.rows)
        factors_meta.append(
            {
                "name": name,
                "rows": len(factor.embedding),
                "condition": [factor.condition.pitch, factor.condition.yaw],
            }
        )
    header = {"kind": "latents", "id_len": id_len, "factors": factors_meta}
    write_features(path, np.vstack(blocks), header=header)


def load_latents(path: str | Path) -> LatentState:
    from .io import read_features

    rows, header = read_features(path)
    if not header or header.get("kind") != "latents":
        raise FormatError(f"{path} is not a latent dump (missing header)")
    if rows.shape[1] != 3:
        raise FormatError(f"latent dump rows must have dim 3, got {rows.shape[1]}")
    id_len = int(header["id_len"])
    id_rows = -(-id_len // 3)
    cursor = id_rows
    factors = {}
    for meta in header["factors"]:
        n = int(meta["rows"])
        block = rows[cursor : cursor + n]
        if len(block) != n:
            raise FormatError(f"latent dump truncated in factor {meta['name']!r}")
        cursor += n
        pitch, yaw = meta["condition"]
        factors[meta["name"]] = Factor(
            FactorEmbedding(np.asarray(block, dtype=np.float64)),
            Direction(float(pitch), float(yaw)),
        )
    id_code = rows[:id_rows].astype(np.float64).ravel()[:id_len]
    return LatentState(id_code=id_code, factors=factors)

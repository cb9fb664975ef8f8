"""Readers and writers for every artifact format.

Formats:
  * manifests: JSON lines, one sample per row, floats written with 17
    significant digits so values round-trip bit-exactly;
  * meshes: line-oriented text (``v x y z r g b``, ``f i j k`` 1-based,
    ``l i`` landmark, ``c x y z`` face center);
  * images: 8-bit RGB PNG, quantized by round(v * 255);
  * feature files: "GZFT" magic, little-endian u32 version/count/dim, then
    count x dim float32 values, optionally followed by a length-prefixed
    JSON header;
  * run config: INI-style key=value text with bracketed sections; unknown
    sections or keys are rejected.

All writers are deterministic: the same value always produces the same
bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError
from .facemesh import FaceMesh
from .geometry import Direction
from .raster import ImageBuffer

MANIFEST_KEYS = (
    "subject",
    "image",
    "mesh",
    "head_pitch",
    "head_yaw",
    "gaze_pitch",
    "gaze_yaw",
    "camera",
)

_GZFT_MAGIC = b"GZFT"
_GZFT_VERSION = 1


@dataclass(frozen=True)
class ManifestEntry:
    """One labeled sample: file paths, labels and the capturing camera."""

    subject: str
    image: str
    mesh: str
    head: Direction
    gaze: Direction
    camera: str = ""

    def __post_init__(self):
        if not self.subject or not self.image or not self.mesh:
            raise ValueError("subject, image and mesh must be non-empty")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def manifest_line(entry: ManifestEntry) -> str:
    """Canonical one-line JSON encoding of a manifest row."""
    parts = [
        f'"subject": {json.dumps(entry.subject)}',
        f'"image": {json.dumps(entry.image)}',
        f'"mesh": {json.dumps(entry.mesh)}',
        f'"head_pitch": {_fmt(entry.head.pitch)}',
        f'"head_yaw": {_fmt(entry.head.yaw)}',
        f'"gaze_pitch": {_fmt(entry.gaze.pitch)}',
        f'"gaze_yaw": {_fmt(entry.gaze.yaw)}',
        f'"camera": {json.dumps(entry.camera)}',
    ]
    return "{" + ", ".join(parts) + "}"


class ManifestWriter:
    """Streaming JSONL writer; one owner per destination file."""

    def __init__(self, path: str | Path):
        self._fh: IO[str] = open(path, "w", encoding="utf-8", newline="\n")

    def write(self, entry: ManifestEntry) -> None:
        self._fh.write(manifest_line(entry) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ManifestWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    with ManifestWriter(path) as writer:
        for entry in entries:
            writer.write(entry)


def _parse_manifest_row(obj: dict, line_no: int) -> ManifestEntry:
    unknown = set(obj) - set(MANIFEST_KEYS)
    if unknown:
        raise FormatError(f"unknown manifest keys {sorted(unknown)}", line=line_no)
    missing = set(MANIFEST_KEYS) - set(obj)
    if missing:
        raise FormatError(f"missing manifest keys {sorted(missing)}", line=line_no)
    try:
        return ManifestEntry(
            subject=str(obj["subject"]),
            image=str(obj["image"]),
            mesh=str(obj["mesh"]),
            head=Direction(float(obj["head_pitch"]), float(obj["head_yaw"])),
            gaze=Direction(float(obj["gaze_pitch"]), float(obj["gaze_yaw"])),
            camera=str(obj["camera"]),
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad manifest row: {exc}", line=line_no) from exc
    except Exception as exc:  # InvalidDirection and friends
        raise FormatError(f"bad manifest row: {exc}", line=line_no) from exc


def iter_manifest(path: str | Path) -> Iterator[ManifestEntry]:
    """Stream manifest rows; malformed lines raise with their line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=line_no) from exc
            if not isinstance(obj, dict):
                raise FormatError("manifest row is not an object", line=line_no)
            yield _parse_manifest_row(obj, line_no)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    return list(iter_manifest(path))


RAW_KEYS = ("subject", "image", "mesh", "camera", "face_center", "head_rotation", "gaze_vector")


@dataclass(frozen=True)
class RawSample:
    """Un-normalized input row: image plus 3D annotations in camera coords."""

    subject: str
    image: str
    mesh: str
    camera: str
    face_center: np.ndarray  # (3,) mm
    head_rotation: np.ndarray  # (3, 3) row-major
    gaze_vector: np.ndarray  # (3,) unit


def read_raw_manifest(path: str | Path) -> list[RawSample]:
    """Read rows of the raw (pre-normalization) manifest schema."""
    rows: list[RawSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=line_no) from exc
            if not isinstance(obj, dict):
                raise FormatError("raw row is not an object", line=line_no)
            unknown = set(obj) - set(RAW_KEYS)
            if unknown:
                raise FormatError(f"unknown raw keys {sorted(unknown)}", line=line_no)
            missing = set(RAW_KEYS) - set(obj)
            if missing:
                raise FormatError(f"missing raw keys {sorted(missing)}", line=line_no)
            try:
                rows.append(
                    RawSample(
                        subject=str(obj["subject"]),
                        image=str(obj["image"]),
                        mesh=str(obj["mesh"]),
                        camera=str(obj["camera"]),
                        face_center=np.array(obj["face_center"], dtype=np.float64).reshape(3),
                        head_rotation=np.array(obj["head_rotation"], dtype=np.float64).reshape(
                            3, 3
                        ),
                        gaze_vector=np.array(obj["gaze_vector"], dtype=np.float64).reshape(3),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise FormatError(f"bad raw row: {exc}", line=line_no) from exc
    return rows


# ---------------------------------------------------------------------------
# mesh text format


def write_mesh(path: str | Path, mesh: FaceMesh) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v, c in zip(mesh.vertices, mesh.colors):
            fh.write(
                f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}"
                f" {_fmt(c[0])} {_fmt(c[1])} {_fmt(c[2])}\n"
            )
        for tri in mesh.triangles:
            fh.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
        for idx in mesh.landmark_indices:
            fh.write(f"l {idx + 1}\n")
        fc = mesh.face_center
        fh.write(f"c {_fmt(fc[0])} {_fmt(fc[1])} {_fmt(fc[2])}\n")


def _floats(fields: list[str], n: int, line_no: int) -> list[float]:
    if len(fields) != n:
        raise FormatError(f"expected {n} fields, got {len(fields)}", line=line_no)
    try:
        values = [float(f) for f in fields]
    except ValueError as exc:
        raise FormatError(f"bad float: {exc}", line=line_no) from exc
    if not all(math.isfinite(v) for v in values):
        raise FormatError("non-finite value", line=line_no)
    return values


def read_mesh(path: str | Path) -> FaceMesh:
    vertices: list[list[float]] = []
    colors: list[list[float]] = []
    triangles: list[list[int]] = []
    landmarks: list[int] = []
    center: list[float] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            tag, rest = fields[0], fields[1:]
            if tag == "v":
                values = _floats(rest, 6, line_no)
                vertices.append(values[:3])
                colors.append(values[3:])
            elif tag == "f":
                idx = _ints(rest, 3, line_no)
                triangles.append([i - 1 for i in idx])
            elif tag == "l":
                landmarks.append(_ints(rest, 1, line_no)[0] - 1)
            elif tag == "c":
                center = _floats(rest, 3, line_no)
            else:
                raise FormatError(f"unknown record type {tag!r}", line=line_no)
    try:
        return FaceMesh(
            vertices=np.array(vertices, dtype=np.float64).reshape(-1, 3),
            triangles=np.array(triangles, dtype=np.int64).reshape(-1, 3),
            colors=np.array(colors, dtype=np.float64).reshape(-1, 3),
            landmark_indices=tuple(landmarks),
            face_center=None if center is None else np.array(center),
        )
    except ValueError as exc:
        raise FormatError(f"inconsistent mesh: {exc}") from exc


def _ints(fields: list[str], n: int, line_no: int) -> list[int]:
    if len(fields) != n:
        raise FormatError(f"expected {n} fields, got {len(fields)}", line=line_no)
    try:
        values = [int(f) for f in fields]
    except ValueError as exc:
        raise FormatError(f"bad integer: {exc}", line=line_no) from exc
    if any(v < 1 for v in values):
        raise FormatError("indices are 1-based and must be >= 1", line=line_no)
    return values


# ---------------------------------------------------------------------------
# PNG images


def write_image(path: str | Path, image: ImageBuffer) -> None:
    quantized = np.round(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def read_image(path: str | Path) -> ImageBuffer:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read PNG {path}: {exc}") from exc
    return ImageBuffer(arr / 255.0)


# ---------------------------------------------------------------------------
# GZFT feature files


def write_features(path: str | Path, rows: np.ndarray, header: dict | None = None) -> None:
    """Write a count x dim float32 feature file, optionally with a JSON header."""
    arr = np.ascontiguousarray(np.asarray(rows, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"feature rows must be 2-D, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("feature values must be finite")
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_GZFT_MAGIC)
        fh.write(struct.pack("<III", _GZFT_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(payload)
        if header is not None:
            blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def read_features(path: str | Path) -> tuple[np.ndarray, dict | None]:
    """Read a feature file back as (float32 rows, optional header)."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(
            f"feature file needs a 16-byte header, got {len(data)} bytes", offset=len(data)
        )
    if data[:4] != _GZFT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", offset=0)
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != _GZFT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    expected = count * dim * 4
    actual = len(data) - 16
    if actual < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {actual}", offset=16
        )
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=16)
    rows = rows.reshape(count, dim).copy()
    if rows.size and not np.isfinite(rows).all():
        raise FormatError("non-finite feature value", offset=16)
    header = None
    tail = data[16 + expected :]
    if tail:
        if len(tail) < 4:
            raise FormatError(
                "dangling bytes after payload are not a length-prefixed header",
                offset=16 + expected,
            )
        (hlen,) = struct.unpack_from("<I", tail, 0)
        blob = tail[4:]
        if len(blob) != hlen:
            raise FormatError(
                f"header length says {hlen} bytes, found {len(blob)}",
                offset=16 + expected + 4,
            )
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad JSON header: {exc}", offset=16 + expected + 4) from exc
    return rows, header


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration; sections missing from the file use defaults."""

    normalization: "NormalizationSpec"
    camera: "CameraIntrinsics | None"
    augment: "AugmentConfig"
    protocol: "ProtocolConfig"
    paths: dict[str, str]


_CONFIG_SECTIONS = {
    "normalization": {"focal_norm", "distance_norm", "out_width", "out_height"},
    "camera": {"fx", "fy", "cx", "cy"},
    "augment": {
        "mode",
        "radius_deg",
        "targets_per_source",
        "sources_per_subject",
        "min_subject_samples",
        "seed",
        "background",
        "background_pool",
        "center_pitch",
        "center_yaw",
    },
    "protocol": {
        "targets_per_source",
        "radius_deg",
        "sources_per_subject",
        "pattern",
        "seed",
        "center_pitch",
        "center_yaw",
    },
    "paths": {"output", "manifest", "pool"},
}


def _parse_sections(path: str | Path) -> dict[str, dict[str, str]]:
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    sections: dict[str, dict[str, str]] = {}
    for name in parser.sections():
        if name not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        known = _CONFIG_SECTIONS[name]
        values = dict(parser.items(name))
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)} in section [{name}]")
        sections[name] = values
    return sections


def _get(values: dict[str, str], key: str, convert, default):
    if key not in values:
        return default
    try:
        return convert(values[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {values[key]!r}") from exc


def read_run_config(path: str | Path) -> RunConfig:
    # Local imports: augment/evalharness import this module at load time.
    from .augment import AugmentConfig, SamplingMode
    from .camnorm import NormalizationSpec
    from .evalharness import ProtocolConfig
    from .raster import CameraIntrinsics
    from .redirect import RedirectPattern

    sections = _parse_sections(path)

    norm_raw = sections.get("normalization", {})
    normalization = NormalizationSpec(
        focal_norm=_get(norm_raw, "focal_norm", float, 500.0),
        distance_norm=_get(norm_raw, "distance_norm", float, 600.0),
        out_width=_get(norm_raw, "out_width", int, 128),
        out_height=_get(norm_raw, "out_height", int, 128),
    )

    camera = None
    if "camera" in sections:
        cam_raw = sections["camera"]
        try:
            camera = CameraIntrinsics(
                fx=_get(cam_raw, "fx", float, None),
                fy=_get(cam_raw, "fy", float, None),
                cx=_get(cam_raw, "cx", float, None),
                cy=_get(cam_raw, "cy", float, None),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [camera] section: {exc}") from exc

    aug_raw = sections.get("augment", {})
    try:
        augment = AugmentConfig(
            mode=_get(aug_raw, "mode", SamplingMode, SamplingMode.HEAD_BASED),
            radius_deg=_get(aug_raw, "radius_deg", float, 60.0),
            targets_per_source=_get(aug_raw, "targets_per_source", int, 10),
            sources_per_subject=_get(aug_raw, "sources_per_subject", int, 30),
            min_subject_samples=_get(aug_raw, "min_subject_samples", int, 30),
            seed=_get(aug_raw, "seed", int, 0),
            background_mode=_get(aug_raw, "background", str, "solid"),
            background_pool=_get(aug_raw, "background_pool", str, None),
            target_center=Direction(
                _get(aug_raw, "center_pitch", float, 0.0),
                _get(aug_raw, "center_yaw", float, 0.0),
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [augment] section: {exc}") from exc

    proto_raw = sections.get("protocol", {})
    try:
        protocol = ProtocolConfig(
            targets_per_source=_get(proto_raw, "targets_per_source", int, 10),
            radius_deg=_get(proto_raw, "radius_deg", float, 60.0),
            sources_per_subject=_get(proto_raw, "sources_per_subject", int, 20),
            pattern=_get(proto_raw, "pattern", RedirectPattern, RedirectPattern.BOTH),
            seed=_get(proto_raw, "seed", int, 0),
            target_center=Direction(
                _get(proto_raw, "center_pitch", float, 0.0),
                _get(proto_raw, "center_yaw", float, 0.0),
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [protocol] section: {exc}") from exc

    return RunConfig(
        normalization=normalization,
        camera=camera,
        augment=augment,
        protocol=protocol,
        paths=dict(sections.get("paths", {})),
    )

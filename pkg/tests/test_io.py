import json
import math
import struct

import numpy as np
import pytest

from gazekit.errors import ConfigError, FormatError, GazekitError
from gazekit.geometry import Direction
from gazekit.io import (
    ManifestEntry,
    manifest_line,
    read_features,
    read_image,
    read_manifest,
    read_mesh,
    read_raw_manifest,
    read_run_config,
    write_features,
    write_image,
    write_manifest,
    write_mesh,
)
from gazekit.raster import ImageBuffer
from gazekit.toydata import make_face_mesh


def sample_entries():
    return [
        ManifestEntry(
            subject="s01",
            image="images/a.png",
            mesh="meshes/a.mesh",
            head=Direction(0.1, -0.2),
            gaze=Direction(-0.05, math.pi),
            camera="cam0",
        ),
        ManifestEntry(
            subject="s02",
            image="images/b.png",
            mesh="meshes/b.mesh",
            head=Direction(0.123456789123456789, 0.987654321),
            gaze=Direction(-1.5, 3.0),
            camera="",
        ),
    ]


class TestManifest:
    def test_value_round_trip(self, tmp_path):
        path = tmp_path / "m.jsonl"
        entries = sample_entries()
        write_manifest(path, entries)
        assert read_manifest(path) == entries

    def test_byte_round_trip(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, sample_entries())
        first = path.read_bytes()
        write_manifest(path, read_manifest(path))
        assert path.read_bytes() == first

    def test_pi_yaw_bit_pattern(self, tmp_path):
        path = tmp_path / "m.jsonl"
        entry = sample_entries()[0]
        write_manifest(path, [entry])
        back = read_manifest(path)[0]
        assert struct.pack("<d", back.gaze.yaw) == struct.pack("<d", math.pi)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        line = manifest_line(sample_entries()[0])
        obj = json.loads(line)
        obj["extra"] = 1
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(FormatError) as err:
            read_manifest(path)
        assert "line 1" in str(err.value)

    def test_missing_key_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        good = manifest_line(sample_entries()[0])
        path.write_text(good + "\n" + '{"subject": "x"}\n')
        with pytest.raises(FormatError) as err:
            read_manifest(path)
        assert "line 2" in str(err.value)

    def test_bad_json_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(FormatError) as err:
            read_manifest(path)
        assert err.value.line == 1

    def test_empty_paths_rejected(self):
        with pytest.raises(ValueError):
            ManifestEntry(
                subject="", image="a", mesh="b", head=Direction(0, 0), gaze=Direction(0, 0)
            )


class TestMesh:
    def test_round_trip(self, tmp_path):
        mesh = make_face_mesh(Direction(0.1, -0.2))
        path = tmp_path / "face.mesh"
        write_mesh(path, mesh)
        back = read_mesh(path)
        np.testing.assert_array_equal(back.vertices, mesh.vertices)
        np.testing.assert_array_equal(back.triangles, mesh.triangles)
        np.testing.assert_array_equal(back.colors, mesh.colors)
        assert back.landmark_indices == mesh.landmark_indices
        np.testing.assert_array_equal(back.face_center, mesh.face_center)

    def test_byte_round_trip(self, tmp_path):
        mesh = make_face_mesh(Direction(-0.3, 0.4))
        path = tmp_path / "face.mesh"
        write_mesh(path, mesh)
        first = path.read_bytes()
        write_mesh(path, read_mesh(path))
        assert path.read_bytes() == first

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("v 0 0 600 0.5 0.5 0.5\nv 1 0 600 0.5 0.5 0.5\nv oops\n")
        with pytest.raises(FormatError) as err:
            read_mesh(path)
        assert err.value.line == 3

    def test_unknown_record(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("x 1 2 3\n")
        with pytest.raises(FormatError) as err:
            read_mesh(path)
        assert err.value.line == 1

    def test_zero_index_rejected(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text(
            "v 0 0 600 0.5 0.5 0.5\nv 1 0 600 0.5 0.5 0.5\nv 0 1 600 0.5 0.5 0.5\nf 0 1 2\n"
        )
        with pytest.raises(FormatError) as err:
            read_mesh(path)
        assert err.value.line == 4

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text(
            "v 0 0 600 0.5 0.5 0.5\nv 1 0 600 0.5 0.5 0.5\nv 0 1 600 0.5 0.5 0.5\nf 1 2 9\n"
        )
        with pytest.raises(FormatError):
            read_mesh(path)


class TestImage:
    def test_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(3)
        img = ImageBuffer(rng.random((16, 24, 3)))
        path = tmp_path / "img.png"
        write_image(path, img)
        back = read_image(path)
        assert back.width == 24 and back.height == 16
        np.testing.assert_allclose(back.pixels, np.round(img.pixels * 255) / 255, atol=1e-12)

    def test_deterministic_bytes(self, tmp_path):
        img = ImageBuffer.full(8, 8, (0.2, 0.4, 0.6))
        write_image(tmp_path / "a.png", img)
        write_image(tmp_path / "b.png", img)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_unreadable(self, tmp_path):
        path = tmp_path / "not.png"
        path.write_bytes(b"hello")
        with pytest.raises(FormatError):
            read_image(path)


class TestFeatures:
    def test_empty_is_16_bytes(self, tmp_path):
        path = tmp_path / "f.gzft"
        write_features(path, np.zeros((0, 7)))
        assert path.stat().st_size == 16
        rows, header = read_features(path)
        assert rows.shape == (0, 7)
        assert header is None

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(13, 9)).astype(np.float32)
        path = tmp_path / "f.gzft"
        write_features(path, rows)
        back, header = read_features(path)
        np.testing.assert_array_equal(back, rows)
        assert header is None

    def test_byte_level_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        path = tmp_path / "f.gzft"
        write_features(path, rng.normal(size=(4, 3)), header={"k": [1, 2]})
        first = path.read_bytes()
        rows, header = read_features(path)
        write_features(path, rows, header=header)
        assert path.read_bytes() == first

    def test_header_round_trip(self, tmp_path):
        path = tmp_path / "f.gzft"
        header = {"factors": [{"name": "head", "rows": 4}], "id_len": 5}
        write_features(path, np.ones((2, 3)), header=header)
        _, back = read_features(path)
        assert back == header

    def test_truncated_payload_names_counts(self, tmp_path):
        path = tmp_path / "f.gzft"
        write_features(path, np.ones((4, 4)))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FormatError) as err:
            read_features(path)
        assert "64" in str(err.value) and "56" in str(err.value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.gzft"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError) as err:
            read_features(path)
        assert err.value.offset == 0

    def test_bad_version(self, tmp_path):
        path = tmp_path / "f.gzft"
        path.write_bytes(b"GZFT" + struct.pack("<III", 9, 0, 0))
        with pytest.raises(FormatError):
            read_features(path)

    def test_fuzzed_inputs_never_crash(self, tmp_path):
        rng = np.random.default_rng(11)
        base = tmp_path / "f.gzft"
        write_features(base, rng.normal(size=(6, 5)), header={"kind": "x"})
        data = bytearray(base.read_bytes())
        for trial in range(300):
            mutated = bytearray(data)
            for _ in range(rng.integers(1, 6)):
                op = rng.integers(3)
                if op == 0 and mutated:
                    mutated[rng.integers(len(mutated))] = rng.integers(256)
                elif op == 1 and mutated:
                    del mutated[rng.integers(len(mutated)) :]
                else:
                    mutated.extend(rng.integers(0, 256, size=rng.integers(1, 9), dtype=np.uint8).tobytes())
            path = tmp_path / "fuzz.gzft"
            path.write_bytes(bytes(mutated))
            try:
                read_features(path)
            except FormatError as exc:
                assert exc.offset is not None or "version" in str(exc)
            except GazekitError:
                pass


class TestRawManifest:
    def test_round_trip(self, tmp_path):
        row = {
            "subject": "s",
            "image": "i.png",
            "mesh": "m.mesh",
            "camera": "c",
            "face_center": [0.0, 0.0, 600.0],
            "head_rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
            "gaze_vector": [0.0, 0.0, -1.0],
        }
        path = tmp_path / "raw.jsonl"
        path.write_text(json.dumps(row) + "\n")
        samples = read_raw_manifest(path)
        assert len(samples) == 1
        np.testing.assert_array_equal(samples[0].head_rotation, np.eye(3))

    def test_missing_key(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        path.write_text('{"subject": "s"}\n')
        with pytest.raises(FormatError) as err:
            read_raw_manifest(path)
        assert err.value.line == 1


class TestRunConfig:
    def test_defaults_from_empty(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("")
        cfg = read_run_config(path)
        assert cfg.normalization.focal_norm == 500.0
        assert cfg.normalization.distance_norm == 600.0
        assert cfg.normalization.out_width == 128
        assert cfg.augment.radius_deg == 60.0
        assert cfg.augment.targets_per_source == 10
        assert cfg.augment.sources_per_subject == 30
        assert cfg.protocol.sources_per_subject == 20
        assert cfg.camera is None

    def test_full_parse(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "[normalization]\nfocal_norm = 400\nout_width = 64\nout_height = 64\n"
            "[camera]\nfx = 600\nfy = 610\ncx = 320\ncy = 240\n"
            "[augment]\nmode = gaze\nradius_deg = 40\nseed = 7\n"
            "[protocol]\npattern = gaze-only\ntargets_per_source = 5\n"
            "[paths]\noutput = out\n"
        )
        cfg = read_run_config(path)
        assert cfg.normalization.focal_norm == 400.0
        assert cfg.camera.fx == 600.0
        assert cfg.augment.mode.value == "gaze"
        assert cfg.augment.radius_deg == 40.0
        assert cfg.augment.seed == 7
        assert cfg.protocol.pattern.value == "gaze-only"
        assert cfg.protocol.targets_per_source == 5
        assert cfg.paths == {"output": "out"}

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[mystery]\nkey = 1\n")
        with pytest.raises(ConfigError):
            read_run_config(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[augment]\nbogus = 1\n")
        with pytest.raises(ConfigError):
            read_run_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[augment]\nradius_deg = loud\n")
        with pytest.raises(ConfigError):
            read_run_config(path)

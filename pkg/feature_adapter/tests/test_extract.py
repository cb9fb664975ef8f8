import json

import numpy as np
import pytest
from PIL import Image

from feature_adapter import AdapterError, ExtractorSpec, extract
from feature_adapter.backbones import GridStatsBackbone, make_backbone
from feature_adapter.cli import main


def write_png(path, pixels):
    Image.fromarray(np.round(pixels * 255.0).astype(np.uint8), mode="RGB").save(path)


def make_images(root, count, seed=0, size=32):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = root / f"img_{i:03d}.png"
        write_png(p, rng.random((size, size, 3)))
        paths.append(p)
    return paths


def write_manifest(path, image_paths):
    with open(path, "w") as fh:
        for p in image_paths:
            row = {
                "subject": "s",
                "image": str(p),
                "mesh": "-",
                "head_pitch": 0.0,
                "head_yaw": 0.0,
                "gaze_pitch": 0.0,
                "gaze_yaw": 0.0,
                "camera": "",
            }
            fh.write(json.dumps(row) + "\n")


class TestExtract:
    def test_row_count_matches_manifest(self, tmp_path):
        paths = make_images(tmp_path / "imgs", 7)
        manifest = tmp_path / "m.jsonl"
        write_manifest(manifest, paths)
        out = tmp_path / "f.gzft"
        count = extract(
            ExtractorSpec(backbone="grid-stats", output=str(out), manifest=str(manifest))
        )
        assert count == 7
        from gazekit.io import read_features

        rows, _ = read_features(out)
        assert rows.shape == (7, GridStatsBackbone.dim)

    def test_deterministic_bytes(self, tmp_path):
        make_images(tmp_path / "imgs", 5, seed=3)
        a = tmp_path / "a.gzft"
        b = tmp_path / "b.gzft"
        for out in (a, b):
            extract(
                ExtractorSpec(
                    backbone="grid-stats", output=str(out), directory=str(tmp_path / "imgs")
                )
            )
        assert a.read_bytes() == b.read_bytes()

    def test_batching_does_not_change_rows(self, tmp_path):
        make_images(tmp_path / "imgs", 9, seed=5)
        outs = []
        for batch in (1, 4, 64):
            out = tmp_path / f"b{batch}.gzft"
            extract(
                ExtractorSpec(
                    backbone="grid-stats",
                    output=str(out),
                    directory=str(tmp_path / "imgs"),
                    batch_size=batch,
                )
            )
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_missing_image_fails_with_row_index(self, tmp_path):
        paths = make_images(tmp_path / "imgs", 3)
        manifest = tmp_path / "m.jsonl"
        rows = paths[:1] + [tmp_path / "imgs" / "missing.png"] + paths[2:]
        write_manifest(manifest, rows)
        out = tmp_path / "f.gzft"
        with pytest.raises(AdapterError) as err:
            extract(
                ExtractorSpec(backbone="grid-stats", output=str(out), manifest=str(manifest))
            )
        assert "row 1" in str(err.value)
        assert not out.exists()  # no partial output

    def test_unknown_backbone_lists_known(self):
        with pytest.raises(AdapterError) as err:
            make_backbone("resnet-9000", None)
        message = str(err.value)
        assert "grid-stats" in message and "identity-recognition" in message

    def test_spec_validation(self, tmp_path):
        with pytest.raises(AdapterError):
            ExtractorSpec(backbone="grid-stats", output="f.gzft")
        with pytest.raises(AdapterError):
            ExtractorSpec(
                backbone="grid-stats", output="f", manifest="m", directory="d"
            )

    def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(AdapterError):
            extract(
                ExtractorSpec(
                    backbone="grid-stats",
                    output=str(tmp_path / "f.gzft"),
                    directory=str(tmp_path / "empty"),
                )
            )


class TestTorchBackbones:
    def test_identity_recognition_needs_weights(self):
        pytest.importorskip("torch")
        with pytest.raises(AdapterError) as err:
            make_backbone("identity-recognition", None)
        assert "--weights" in str(err.value)

    def test_identity_recognition_missing_file(self, tmp_path):
        pytest.importorskip("torch")
        with pytest.raises(AdapterError) as err:
            make_backbone("identity-recognition", str(tmp_path / "nope.pt"))
        assert "does not exist" in str(err.value)

    def test_inception_needs_weights(self):
        pytest.importorskip("torchvision")
        with pytest.raises(AdapterError) as err:
            make_backbone("inception-pool", None)
        assert "--weights" in str(err.value)

    def test_torchscript_identity_end_to_end(self, tmp_path):
        torch = pytest.importorskip("torch")

        class TinyEmbedder(torch.nn.Module):
            def forward(self, x):
                # (N, 3, H, W) -> (N, 12): channel means/stds over quadrants
                n = x.shape[0]
                pooled = torch.nn.functional.adaptive_avg_pool2d(x, (2, 2))
                return pooled.reshape(n, -1)

        weights = tmp_path / "tiny.pt"
        torch.jit.save(torch.jit.script(TinyEmbedder()), str(weights))
        make_images(tmp_path / "imgs", 4, seed=7)
        out = tmp_path / "f.gzft"
        count = extract(
            ExtractorSpec(
                backbone="identity-recognition",
                output=str(out),
                directory=str(tmp_path / "imgs"),
                weights=str(weights),
                batch_size=2,
            )
        )
        assert count == 4
        from gazekit.io import read_features

        rows, _ = read_features(out)
        assert rows.shape == (4, 12)
        assert np.isfinite(rows).all()
        assert len(np.unique(rows, axis=0)) == 4  # distinct images, distinct rows


class TestCli:
    def test_cli_end_to_end(self, tmp_path, capsys):
        make_images(tmp_path / "imgs", 3, seed=9)
        out = tmp_path / "f.gzft"
        code = main(
            [
                "--backbone",
                "grid-stats",
                "--directory",
                str(tmp_path / "imgs"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert out.exists()

    def test_cli_adapter_error_exit_code(self, tmp_path):
        code = main(
            [
                "--backbone",
                "nope",
                "--directory",
                str(tmp_path),
                "--out",
                str(tmp_path / "f.gzft"),
            ]
        )
        assert code == 2

"""Backbone allow-list.

Three documented backbones:

* ``identity-recognition``: a face-identity embedding network supplied as
  a TorchScript file via ``weights``; it must accept float32 NCHW input in
  [0, 1] at 112x112 and return (N, D) embeddings.
* ``inception-pool``: torchvision's Inception v3 trunk with a local
  state-dict file via ``weights``; emits the 2048-d pooled features
  commonly used for distribution-level image comparison, input 299x299.
* ``grid-stats``: weightless, deterministic pixel statistics (8x8
  bilinear grid per channel plus channel means/stds, 198-d). No deep
  model: meant for CI, smoke tests and alignment checks, not for judging
  image quality.

Backbones never compute metrics; they only map images to feature rows.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .extract import AdapterError

GRID = 8


class GridStatsBackbone:
    """Deterministic pixel-statistics features; needs no weights."""

    name = "grid-stats"
    dim = GRID * GRID * 3 + 6

    def __call__(self, batch: list[np.ndarray]) -> np.ndarray:
        rows = np.empty((len(batch), self.dim), dtype=np.float32)
        for i, pixels in enumerate(batch):
            quantized = Image.fromarray(
                np.round(pixels * 255.0).astype(np.uint8), mode="RGB"
            )
            grid = np.asarray(
                quantized.resize((GRID, GRID), Image.BILINEAR), dtype=np.float32
            )
            grid /= 255.0
            flat = pixels.reshape(-1, 3)
            rows[i] = np.concatenate(
                [grid.ravel(), flat.mean(axis=0), flat.std(axis=0)]
            )
        return rows


def _require_torch(backbone: str):
    try:
        import torch
    except ImportError as exc:
        raise AdapterError(
            f"backbone {backbone!r} needs torch; install the adapter with the "
            "[torch] extra (pip install 'gaze-feature-adapter[torch]')"
        ) from exc
    return torch


def _require_weights(backbone: str, weights: str | None, expectation: str) -> Path:
    if not weights:
        raise AdapterError(
            f"backbone {backbone!r} needs --weights pointing to {expectation}"
        )
    path = Path(weights)
    if not path.exists():
        raise AdapterError(
            f"weights file {path} for backbone {backbone!r} does not exist; "
            f"supply {expectation}"
        )
    return path


class TorchscriptIdentityBackbone:
    """Face-identity embeddings from a local TorchScript module."""

    name = "identity-recognition"
    input_size = 112

    def __init__(self, weights: str | None):
        torch = _require_torch(self.name)
        path = _require_weights(self.name, weights, "a TorchScript embedding model")
        try:
            self.model = torch.jit.load(str(path), map_location="cpu").eval()
        except Exception as exc:
            raise AdapterError(
                f"cannot load TorchScript model from {path}: {exc}"
            ) from exc
        self._torch = torch
        self.dim = self._probe_dim()

    def _probe_dim(self) -> int:
        torch = self._torch
        with torch.no_grad():
            out = self.model(torch.zeros(1, 3, self.input_size, self.input_size))
        if out.ndim != 2:
            raise AdapterError(
                f"identity model must return (N, D) embeddings, got shape {tuple(out.shape)}"
            )
        return int(out.shape[1])

    def __call__(self, batch: list[np.ndarray]) -> np.ndarray:
        torch = self._torch
        resized = np.stack([_resize(p, self.input_size) for p in batch])
        tensor = torch.from_numpy(resized).permute(0, 3, 1, 2).contiguous()
        with torch.no_grad():
            out = self.model(tensor)
        return out.numpy().astype(np.float32)


class InceptionPoolBackbone:
    """Pooled Inception-v3 trunk features from a local state dict."""

    name = "inception-pool"
    input_size = 299
    dim = 2048

    def __init__(self, weights: str | None):
        torch = _require_torch(self.name)
        path = _require_weights(
            self.name, weights, "a torchvision inception_v3 state-dict file"
        )
        try:
            from torchvision.models import inception_v3
        except ImportError as exc:
            raise AdapterError(
                f"backbone {self.name!r} needs torchvision; install the adapter "
                "with the [torch] extra"
            ) from exc
        model = inception_v3(weights=None, init_weights=False, aux_logits=True)
        try:
            state = torch.load(str(path), map_location="cpu")
            model.load_state_dict(state)
        except Exception as exc:
            raise AdapterError(f"cannot load inception weights from {path}: {exc}") from exc
        model.fc = torch.nn.Identity()
        self.model = model.eval()
        self._torch = torch

    def __call__(self, batch: list[np.ndarray]) -> np.ndarray:
        torch = self._torch
        resized = np.stack([_resize(p, self.input_size) for p in batch])
        tensor = torch.from_numpy(resized).permute(0, 3, 1, 2).contiguous()
        tensor = (tensor - 0.5) / 0.5
        with torch.no_grad():
            out = self.model(tensor)
        return out.numpy().astype(np.float32)


def _resize(pixels: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(np.round(pixels * 255.0).astype(np.uint8), mode="RGB")
    out = np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)
    return out / 255.0


BACKBONES = {
    "grid-stats": lambda weights: GridStatsBackbone(),
    "identity-recognition": TorchscriptIdentityBackbone,
    "inception-pool": InceptionPoolBackbone,
}


def make_backbone(name: str, weights: str | None):
    if name not in BACKBONES:
        known = ", ".join(sorted(BACKBONES))
        raise AdapterError(f"unknown backbone {name!r}; known backbones: {known}")
    return BACKBONES[name](weights)

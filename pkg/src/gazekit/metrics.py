"""Scalar evaluation measures: MS-SSIM, reconstruction/identity losses,
Fréchet distance between feature distributions, and angular redirection
error in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DimensionMismatch,
    NonFinite,
    TooFewRows,
    TooSmall,
    ZeroVector,
)
from .geometry import Direction, angular_error, direction_to_vector
from .raster import ImageBuffer

# Published five-scale weights of the multi-scale SSIM construction; when an
# image supports fewer scales the leading weights are renormalized to sum 1.
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW = 11
_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


@dataclass(frozen=True)
class FeatureSet:
    """Rows of d-dimensional features from an external extractor."""

    rows: np.ndarray  # (n, d)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.rows))
        if arr.ndim != 2:
            raise DimensionMismatch(f"feature rows must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise NonFinite("feature rows must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "rows", arr)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the training objective."""

    alpha: float = 0.84
    lambda_id: float = 2.0
    lambda_rec: float = 200.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def _gaussian_kernel() -> np.ndarray:
    x = np.arange(_WINDOW, dtype=np.float64) - (_WINDOW - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * _SIGMA**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    tmp = sliding_window_view(img, len(kernel), axis=1) @ kernel
    return sliding_window_view(tmp, len(kernel), axis=0) @ kernel


def _ssim_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window luminance and contrast-structure maps (valid windows only)."""
    k = _gaussian_kernel()
    c1 = _K1**2
    c2 = _K2**2
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    var_x = _filter_valid(x * x, k) - mu_x**2
    var_y = _filter_valid(y * y, k) - mu_y**2
    cov = _filter_valid(x * y, k) - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs = (2.0 * cov + c2) / (var_x + var_y + c2)
    return lum, cs


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h // 2 * 2, : w // 2 * 2]
    return (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0


def _to_gray(image: ImageBuffer) -> np.ndarray:
    return image.pixels.mean(axis=2)


def max_scales(width: int, height: int) -> int:
    """Number of dyadic scales an image supports (window must still fit)."""
    side = min(width, height)
    scales = 0
    while side >= _WINDOW and scales < len(MSSSIM_WEIGHTS):
        scales += 1
        side //= 2
    return scales


def ms_ssim(x: ImageBuffer, y: ImageBuffer, scales: int | None = None) -> float:
    """Multi-scale structural similarity in [0, 1].

    Gaussian window 11 / sigma 1.5, K1=0.01, K2=0.03, dyadic downsampling by
    2x2 mean, grayscale by channel mean. Contrast-structure means are taken
    at every scale and combined with the luminance term at the coarsest
    scale; with ``scales=1`` this reduces to plain single-scale SSIM.
    ``scales=None`` uses as many scales as the image supports (at most 5),
    renormalizing the weights to sum 1.
    """
    if (x.width, x.height) != (y.width, y.height):
        raise DimensionMismatch(
            f"image sizes differ: {x.width}x{x.height} vs {y.width}x{y.height}"
        )
    supported = max_scales(x.width, x.height)
    if supported < 1:
        raise TooSmall(f"min side {min(x.width, x.height)} is below the {_WINDOW}px window")
    if scales is None:
        scales = supported
    elif not 1 <= scales <= supported:
        raise TooSmall(f"image supports {supported} scales, requested {scales}")

    weights = np.array(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    weights /= weights.sum()

    gx = _to_gray(x)
    gy = _to_gray(y)
    terms = np.empty(scales)
    for level in range(scales):
        lum, cs = _ssim_maps(gx, gy)
        if level < scales - 1:
            terms[level] = cs.mean()
            gx = _downsample2(gx)
            gy = _downsample2(gy)
        else:
            terms[level] = (lum * cs).mean()
    # Rare negative contrast-structure means would make fractional powers
    # undefined; clamp to 0 as the usual accommodation.
    terms = np.clip(terms, 0.0, None)
    return float(np.prod(terms**weights))


def l1(x: ImageBuffer, y: ImageBuffer) -> float:
    """Mean absolute difference over all pixels and channels."""
    if x.pixels.shape != y.pixels.shape:
        raise DimensionMismatch(
            f"image shapes differ: {x.pixels.shape} vs {y.pixels.shape}"
        )
    return float(np.abs(x.pixels - y.pixels).mean())


def mixed_rec_loss(x: ImageBuffer, y: ImageBuffer, alpha: float = 0.84) -> float:
    """alpha * (1 - MS-SSIM(x, y)) + (1 - alpha) * l1(x, y)."""
    return alpha * (1.0 - ms_ssim(x, y)) + (1.0 - alpha) * l1(x, y)


def identity_similarity(f1, f2) -> float:
    """Cosine similarity between two feature vectors, in [-1, 1]."""
    a = np.asarray(f1, dtype=np.float64).ravel()
    b = np.asarray(f2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"feature dims differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def identity_loss(f1, f2) -> float:
    """1 - cosine similarity."""
    return 1.0 - identity_similarity(f1, f2)


def total_loss(l_sted: float, l_id: float, l_rec: float, w: LossWeights = LossWeights()) -> float:
    """Weighted training objective: l_sted + lambda_id * l_id + lambda_rec * l_rec.

    The first term is an externally supplied scalar; it is never computed
    here.
    """
    values = (l_sted, l_id, l_rec)
    if not all(math.isfinite(v) for v in values):
        raise NonFinite(f"loss terms must be finite, got {values}")
    return l_sted + w.lambda_id * l_id + w.lambda_rec * l_rec


def _mean_cov(rows: np.ndarray, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance, accumulated in float64 chunks."""
    n, d = rows.shape
    mean = np.zeros(d, dtype=np.float64)
    for i in range(0, n, chunk):
        mean += rows[i : i + chunk].astype(np.float64, copy=False).sum(axis=0)
    mean /= n
    cov = np.zeros((d, d), dtype=np.float64)
    for i in range(0, n, chunk):
        centered = rows[i : i + chunk].astype(np.float64, copy=False) - mean
        cov += centered.T @ centered
    cov /= n - 1
    return mean, (cov + cov.T) / 2.0


def _shrunk(cov: np.ndarray) -> np.ndarray:
    # Guard against near-singular covariances from small or degenerate sets.
    if np.linalg.eigvalsh(cov).min() < 1e-10:
        return cov + 1e-6 * np.eye(len(cov))
    return cov


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), with
    unbiased covariances and matrix square roots taken by symmetric
    eigendecomposition (negative eigenvalues clamped to zero). The symmetric
    product keeps the inner matrix PSD by construction.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"feature dims differ: {a.dim} vs {b.dim}")
    if len(a) < 2 or len(b) < 2:
        raise TooFewRows("need at least 2 rows per set to fit a covariance")
    mu_a, cov_a = _mean_cov(a.rows)
    mu_b, cov_b = _mean_cov(b.rows)
    cov_a = _shrunk(cov_a)
    cov_b = _shrunk(cov_b)
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0)


def redirection_error(target: Direction, estimated: Direction) -> float:
    """Angle between two directions, in degrees."""
    return math.degrees(
        angular_error(direction_to_vector(target), direction_to_vector(estimated))
    )

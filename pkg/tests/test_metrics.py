import math

import numpy as np
import pytest

from gazekit.errors import (
    DimensionMismatch,
    NonFinite,
    TooFewRows,
    TooSmall,
    ZeroVector,
)
from gazekit.geometry import Direction, angular_error, direction_to_vector
from gazekit.metrics import (
    FeatureSet,
    LossWeights,
    fid,
    identity_loss,
    identity_similarity,
    l1,
    max_scales,
    mixed_rec_loss,
    ms_ssim,
    redirection_error,
    total_loss,
)
from gazekit.raster import ImageBuffer


def rand_image(rng, h=32, w=32):
    return ImageBuffer(rng.random((h, w, 3)))


# ---------------------------------------------------------------------------
# independent direct-formula SSIM oracle (plain loops, window recomputed here)


def ssim_oracle(x: ImageBuffer, y: ImageBuffer) -> float:
    gx = x.pixels.mean(axis=2)
    gy = y.pixels.mean(axis=2)
    idx = np.arange(11) - 5.0
    g = np.exp(-(idx**2) / (2.0 * 1.5**2))
    g /= g.sum()
    w2d = np.outer(g, g)
    c1 = 0.01**2
    c2 = 0.03**2
    h, w = gx.shape
    values = []
    for i in range(h - 10):
        for j in range(w - 10):
            wx = gx[i : i + 11, j : j + 11]
            wy = gy[i : i + 11, j : j + 11]
            mx = float((w2d * wx).sum())
            my = float((w2d * wy).sum())
            vx = float((w2d * wx * wx).sum()) - mx * mx
            vy = float((w2d * wy * wy).sum()) - my * my
            cxy = float((w2d * wx * wy).sum()) - mx * my
            lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
            cs = (2 * cxy + c2) / (vx + vy + c2)
            values.append(lum * cs)
    return float(np.mean(values))


class TestMsSsim:
    def test_identity_is_one(self):
        rng = np.random.default_rng(3)
        for h, w in [(32, 32), (128, 128), (11, 20)]:
            img = rand_image(rng, h, w)
            assert ms_ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a, b = rand_image(rng), rand_image(rng)
            assert ms_ssim(a, b) == pytest.approx(ms_ssim(b, a), abs=1e-12)

    def test_single_scale_matches_direct_formula(self):
        # Pairs share structure so the true SSIM is positive: the library
        # clamps negative values to honor its [0, 1] range, which would mask
        # disagreement on anti-correlated noise.
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = rand_image(rng)
            b = ImageBuffer(np.clip(a.pixels + rng.normal(scale=0.15, size=a.pixels.shape), 0, 1))
            got = ms_ssim(a, b, scales=1)
            assert got == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            v = ms_ssim(rand_image(rng, 64, 64), rand_image(rng, 64, 64))
            assert 0.0 <= v <= 1.0

    def test_below_one_when_different(self):
        rng = np.random.default_rng(11)
        img = rand_image(rng, 32, 32)
        other = ImageBuffer(np.clip(img.pixels + 0.05, 0, 1))
        assert ms_ssim(img, other) < 1.0 - 1e-9

    def test_scale_count_adapts(self):
        assert max_scales(128, 128) == 4
        assert max_scales(176, 176) == 5
        assert max_scales(32, 32) == 2
        assert max_scales(11, 11) == 1
        assert max_scales(10, 200) == 0

    def test_too_small(self):
        rng = np.random.default_rng(13)
        with pytest.raises(TooSmall):
            ms_ssim(rand_image(rng, 10, 10), rand_image(rng, 10, 10))
        with pytest.raises(TooSmall):
            ms_ssim(rand_image(rng, 32, 32), rand_image(rng, 32, 32), scales=5)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(15)
        with pytest.raises(DimensionMismatch):
            ms_ssim(rand_image(rng, 32, 32), rand_image(rng, 32, 64))


class TestL1:
    def test_identity(self):
        img = rand_image(np.random.default_rng(17))
        assert l1(img, img) == 0.0

    def test_zeros_vs_ones(self):
        z = ImageBuffer.full(8, 8, (0.0, 0.0, 0.0))
        o = ImageBuffer.full(8, 8, (1.0, 1.0, 1.0))
        assert l1(z, o) == 1.0

    def test_constant_offset(self):
        rng = np.random.default_rng(19)
        base = rng.random((16, 16, 3)) * 0.5
        assert l1(ImageBuffer(base), ImageBuffer(base + 0.5)) == pytest.approx(0.5, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            l1(ImageBuffer.full(4, 4), ImageBuffer.full(4, 5))


class TestMixedRecLoss:
    def test_identical_zero(self):
        img = rand_image(np.random.default_rng(23))
        assert mixed_rec_loss(img, img, 0.84) == pytest.approx(0.0, abs=1e-9)

    def test_alpha_endpoints(self):
        rng = np.random.default_rng(29)
        a, b = rand_image(rng), rand_image(rng)
        assert mixed_rec_loss(a, b, 0.0) == pytest.approx(l1(a, b), abs=1e-15)
        assert mixed_rec_loss(a, b, 1.0) == pytest.approx(1.0 - ms_ssim(a, b), abs=1e-15)

    def test_compositional(self):
        rng = np.random.default_rng(31)
        a, b = rand_image(rng), rand_image(rng)
        alpha = 0.84
        by_hand = alpha * (1.0 - ms_ssim(a, b)) + (1.0 - alpha) * l1(a, b)
        assert mixed_rec_loss(a, b, alpha) == pytest.approx(by_hand, abs=1e-15)

    def test_nonnegative(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            assert mixed_rec_loss(rand_image(rng), rand_image(rng)) >= 0.0


class TestIdentitySimilarity:
    def test_self_similarity(self):
        f = np.array([0.3, -1.2, 4.0])
        assert identity_similarity(f, f) == pytest.approx(1.0, abs=1e-12)
        assert identity_loss(f, f) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal(self):
        f = np.array([1.0, 2.0, -3.0])
        assert identity_similarity(f, -f) == pytest.approx(-1.0, abs=1e-12)
        assert identity_loss(f, -f) == pytest.approx(2.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(41)
        f, g = rng.normal(size=64), rng.normal(size=64)
        assert identity_similarity(3.0 * f, g) == pytest.approx(
            identity_similarity(f, g), abs=1e-12
        )

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            identity_similarity(np.zeros(4), np.ones(4))

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            identity_similarity(np.ones(4), np.ones(5))


class TestTotalLoss:
    def test_sted_passthrough(self):
        assert total_loss(1.0, 0.0, 0.0) == 1.0

    def test_identity_weight(self):
        assert total_loss(0.0, 1.0, 0.0) == 2.0

    def test_reconstruction_weight(self):
        assert total_loss(0.0, 0.0, 0.01) == pytest.approx(2.0, abs=1e-15)

    def test_linearity(self):
        w = LossWeights()
        base = total_loss(0.3, 0.4, 0.5, w)
        assert total_loss(0.3 + 1.0, 0.4, 0.5, w) - base == pytest.approx(1.0, abs=1e-12)
        assert total_loss(0.3, 0.4 + 1.0, 0.5, w) - base == pytest.approx(
            w.lambda_id, abs=1e-12
        )
        assert total_loss(0.3, 0.4, 0.5 + 1.0, w) - base == pytest.approx(
            w.lambda_rec, abs=1e-12
        )

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            total_loss(math.nan, 0.0, 0.0)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=1.5)


class TestFid:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(43)
        a = FeatureSet(rng.normal(size=(200, 16)))
        assert fid(a, a) == pytest.approx(0.0, abs=1e-8)

    def test_one_dimensional_closed_form(self):
        a = FeatureSet(np.array([[-1.0], [1.0]]))
        b = FeatureSet(np.array([[0.0], [2.0]]))
        assert fid(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(47)
        a = FeatureSet(rng.normal(size=(300, 8)))
        b = FeatureSet(rng.normal(loc=0.5, size=(400, 8)))
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-8)

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(53)
        a = rng.normal(size=(500, 12))
        b = rng.normal(loc=0.3, scale=1.2, size=(600, 12))
        q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
        base = fid(FeatureSet(a), FeatureSet(b))
        rotated = fid(FeatureSet(a @ q.T), FeatureSet(b @ q.T))
        assert rotated == pytest.approx(base, abs=1e-6)

    def test_sampled_gaussians_match_analytic(self):
        # Diagonal covariances commute, so the analytic Fréchet distance is
        # sum_i (mu1_i - mu2_i)^2 + (sqrt(v1_i) - sqrt(v2_i))^2.
        rng = np.random.default_rng(59)
        dim, n = 16, 100_000
        mu1 = rng.uniform(-1, 1, size=dim)
        mu2 = mu1 + rng.uniform(0.5, 1.5, size=dim)
        v1 = rng.uniform(0.5, 1.5, size=dim)
        v2 = rng.uniform(0.5, 2.5, size=dim)
        analytic = float(((mu1 - mu2) ** 2).sum() + ((np.sqrt(v1) - np.sqrt(v2)) ** 2).sum())
        a = FeatureSet(rng.normal(size=(n, dim)) * np.sqrt(v1) + mu1)
        b = FeatureSet(rng.normal(size=(n, dim)) * np.sqrt(v2) + mu2)
        got = fid(a, b)
        assert abs(got - analytic) / analytic < 0.05

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fid(FeatureSet(np.zeros((3, 4))), FeatureSet(np.zeros((3, 5))))

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            fid(FeatureSet(np.zeros((1, 4))), FeatureSet(np.ones((5, 4))))

    def test_nonnegative_on_noisy_sets(self):
        rng = np.random.default_rng(61)
        for _ in range(10):
            a = FeatureSet(rng.normal(size=(30, 6)))
            b = FeatureSet(rng.normal(size=(25, 6)))
            assert fid(a, b) >= 0.0

    def test_feature_set_validation(self):
        with pytest.raises(NonFinite):
            FeatureSet(np.array([[np.inf, 0.0]]))
        with pytest.raises(DimensionMismatch):
            FeatureSet(np.zeros(5))


class TestRedirectionError:
    def test_identical(self):
        d = Direction(0.2, -0.7)
        assert redirection_error(d, d) == 0.0

    def test_right_angle(self):
        assert redirection_error(Direction(0, 0), Direction(0, math.pi / 2)) == pytest.approx(
            90.0, abs=1e-9
        )

    def test_matches_angular_error(self):
        rng = np.random.default_rng(67)
        for _ in range(200):
            a = Direction(rng.uniform(-1.4, 1.4), rng.uniform(-3.0, 3.0))
            b = Direction(rng.uniform(-1.4, 1.4), rng.uniform(-3.0, 3.0))
            expected = math.degrees(
                angular_error(direction_to_vector(a), direction_to_vector(b))
            )
            assert redirection_error(a, b) == pytest.approx(expected, abs=1e-12)

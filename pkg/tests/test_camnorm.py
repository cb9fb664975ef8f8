import numpy as np
import pytest

from gazekit.camnorm import (
    CameraIntrinsics,
    HeadPose,
    NormalizationSpec,
    denormalize_direction,
    normalization_rotation,
    normalization_warp,
    normalize_sample,
    warp_image,
)
from gazekit.errors import DegenerateGeometry
from gazekit.geometry import (
    Direction,
    angular_error,
    direction_to_vector,
    is_rotation,
    rotation_from_direction,
)
from gazekit.raster import ImageBuffer

SPEC = NormalizationSpec()


def random_head(rng) -> HeadPose:
    d = Direction(rng.uniform(-1.2, 1.2), rng.uniform(-1.5, 1.5))
    t = rng.uniform([-200, -200, 400], [200, 200, 900])
    return HeadPose(rotation=rotation_from_direction(d), translation=t)


def random_center(rng):
    return rng.uniform([-250, -250, 350], [250, 250, 950])


class TestNormalizationRotation:
    def test_aligned_case_identity(self):
        head = HeadPose(rotation=np.eye(3), translation=np.array([0.0, 0.0, 600.0]))
        r = normalization_rotation([0.0, 0.0, 600.0], head)
        np.testing.assert_allclose(r, np.eye(3), atol=1e-12)

    def test_center_lands_on_axis(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            center = random_center(rng)
            r = normalization_rotation(center, random_head(rng))
            moved = r @ center
            dist = np.linalg.norm(center)
            np.testing.assert_allclose(moved, [0.0, 0.0, dist], atol=1e-6 * dist)

    def test_rows_orthonormal(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            r = normalization_rotation(random_center(rng), random_head(rng))
            assert is_rotation(r, tol=1e-9)

    def test_degenerate_parallel_axes(self):
        # Head x-axis pointing straight at the face center direction.
        rot = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]).T
        head = HeadPose(rotation=rot, translation=np.zeros(3))
        with pytest.raises(DegenerateGeometry):
            normalization_rotation([0.0, 0.0, 500.0], head)


class TestNormalizationWarp:
    def test_identity_when_already_normalized(self):
        w = normalization_warp(SPEC.intrinsics(), np.eye(3), SPEC.distance_norm, SPEC)
        np.testing.assert_allclose(w, np.eye(3), atol=1e-12)

    def test_face_center_maps_to_image_center(self):
        rng = np.random.default_rng(5)
        cam = CameraIntrinsics(fx=620.0, fy=610.0, cx=320.0, cy=240.0)
        for _ in range(200):
            center = random_center(rng)
            head = random_head(rng)
            r = normalization_rotation(center, head)
            w = normalization_warp(cam, r, float(np.linalg.norm(center)), SPEC)
            # Numeric check: push the projected center through the warp.
            proj = cam.matrix() @ center
            px = proj[:2] / proj[2]
            moved = w @ np.array([px[0], px[1], 1.0])
            moved = moved[:2] / moved[2]
            assert abs(moved[0] - SPEC.out_width / 2) < 0.5
            assert abs(moved[1] - SPEC.out_height / 2) < 0.5

    def test_invertible(self):
        rng = np.random.default_rng(7)
        cam = CameraIntrinsics(fx=700.0, fy=700.0, cx=300.0, cy=260.0)
        for _ in range(200):
            center = random_center(rng)
            r = normalization_rotation(center, random_head(rng))
            w = normalization_warp(cam, r, float(np.linalg.norm(center)), SPEC)
            assert abs(np.linalg.det(w)) > 1e-12


class TestNormalizeSample:
    def test_aligned_case_labels_unchanged(self):
        head = HeadPose(rotation=np.eye(3), translation=np.array([0.0, 0.0, 600.0]))
        gaze = direction_to_vector(Direction(0.2, -0.4))
        img = ImageBuffer.full(SPEC.out_width, SPEC.out_height, (0.5, 0.5, 0.5))
        out, head_dir, gaze_dir, r = normalize_sample(
            img, SPEC.intrinsics(), head, gaze, [0.0, 0.0, 600.0], SPEC
        )
        np.testing.assert_allclose(r, np.eye(3), atol=1e-12)
        assert head_dir.pitch == pytest.approx(0.0, abs=1e-12)
        assert head_dir.yaw == pytest.approx(0.0, abs=1e-12)
        assert gaze_dir.pitch == pytest.approx(0.2, abs=1e-12)
        assert gaze_dir.yaw == pytest.approx(-0.4, abs=1e-12)
        np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-12)

    def test_gaze_back_rotation_recovers_input(self):
        rng = np.random.default_rng(11)
        img = ImageBuffer.full(32, 32, (0.3, 0.3, 0.3))
        cam = CameraIntrinsics(fx=400.0, fy=400.0, cx=16.0, cy=16.0)
        spec = NormalizationSpec(out_width=32, out_height=32)
        for _ in range(100):
            head = random_head(rng)
            gaze = rng.normal(size=3)
            gaze /= np.linalg.norm(gaze)
            center = random_center(rng)
            _, _, gaze_dir, r = normalize_sample(img, cam, head, gaze, center, spec)
            np.testing.assert_allclose(denormalize_direction(gaze_dir, r), gaze, atol=1e-9)

    def test_angles_between_gazes_preserved(self):
        rng = np.random.default_rng(13)
        img = ImageBuffer.full(16, 16, (0.5, 0.5, 0.5))
        cam = CameraIntrinsics(fx=400.0, fy=400.0, cx=8.0, cy=8.0)
        spec = NormalizationSpec(out_width=16, out_height=16)
        for _ in range(100):
            head = random_head(rng)
            center = random_center(rng)
            g1, g2 = rng.normal(size=3), rng.normal(size=3)
            g1 /= np.linalg.norm(g1)
            g2 /= np.linalg.norm(g2)
            _, _, d1, _ = normalize_sample(img, cam, head, g1, center, spec)
            _, _, d2, _ = normalize_sample(img, cam, head, g2, center, spec)
            before = angular_error(g1, g2)
            after = angular_error(direction_to_vector(d1), direction_to_vector(d2))
            assert abs(before - after) < 1e-9

    def test_distance_scaling_never_touches_labels(self):
        rng = np.random.default_rng(17)
        img = ImageBuffer.full(16, 16, (0.2, 0.2, 0.2))
        cam = CameraIntrinsics(fx=400.0, fy=400.0, cx=8.0, cy=8.0)
        for _ in range(50):
            head = random_head(rng)
            center = random_center(rng)
            gaze = rng.normal(size=3)
            gaze /= np.linalg.norm(gaze)
            out = []
            for dn in (300.0, 600.0, 1200.0):
                spec = NormalizationSpec(distance_norm=dn, out_width=16, out_height=16)
                _, head_dir, gaze_dir, _ = normalize_sample(img, cam, head, gaze, center, spec)
                out.append((head_dir, gaze_dir))
            assert all(o == out[0] for o in out[1:])

    def test_round_trip_direction_identity(self):
        rng = np.random.default_rng(19)
        for _ in range(200):
            r = normalization_rotation(random_center(rng), random_head(rng))
            d = Direction(rng.uniform(-1.4, 1.4), rng.uniform(-3.0, 3.0))
            v = direction_to_vector(d)
            from gazekit.geometry import vector_to_direction

            normalized = vector_to_direction(r @ v)
            np.testing.assert_allclose(denormalize_direction(normalized, r), v, atol=1e-12)


class TestWarpImage:
    def checkerboard(self, size=192, square=64):
        yy, xx = np.mgrid[0:size, 0:size]
        board = (((yy // square) + (xx // square)) % 2).astype(float)
        return ImageBuffer(np.repeat(board[:, :, None], 3, axis=2) * 0.8 + 0.1)

    def test_forward_backward_recovers_interior(self):
        size = 192
        img = self.checkerboard(size)
        head = HeadPose(
            rotation=rotation_from_direction(Direction(0.05, -0.07)),
            translation=np.array([20.0, -10.0, 600.0]),
        )
        center = np.array([25.0, -12.0, 620.0])
        cam = CameraIntrinsics(fx=500.0, fy=500.0, cx=size / 2, cy=size / 2)
        spec = NormalizationSpec(
            focal_norm=500.0, distance_norm=600.0, out_width=size, out_height=size
        )
        r = normalization_rotation(center, head)
        w = normalization_warp(cam, r, float(np.linalg.norm(center)), spec)
        once = warp_image(img, w, size, size)
        back = warp_image(once, np.linalg.inv(w), size, size)
        margin = size // 6
        interior = (slice(margin, size - margin), slice(margin, size - margin))
        mae = np.abs(back.pixels[interior] - img.pixels[interior]).mean()
        assert mae <= 2.0 / 255.0

    def test_identity_warp_is_noop(self):
        rng = np.random.default_rng(23)
        img = ImageBuffer(rng.random((20, 20, 3)))
        out = warp_image(img, np.eye(3), 20, 20)
        np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-12)


class TestWarpBytes:
    def test_round_trip_bit_exact(self):
        from gazekit.camnorm import warp_from_bytes, warp_to_bytes

        rng = np.random.default_rng(29)
        head = random_head(rng)
        center = random_center(rng)
        r = normalization_rotation(center, head)
        w = normalization_warp(SPEC.intrinsics(), r, float(np.linalg.norm(center)), SPEC)
        blob = warp_to_bytes(w)
        assert len(blob) == 72
        np.testing.assert_array_equal(warp_from_bytes(blob), w)

    def test_bad_sizes(self):
        from gazekit.camnorm import warp_from_bytes, warp_to_bytes

        with pytest.raises(ValueError):
            warp_to_bytes(np.eye(2))
        with pytest.raises(ValueError):
            warp_from_bytes(b"\x00" * 10)

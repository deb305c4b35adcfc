"""Depth I/O and back-projection; expected values hand-computed from the
pinhole relations x = (u-cx)z/fx, y = (cy-v)z/fy."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hapmap.depthio import (DepthFormatError, DepthFrame, Intrinsics,
                            backproject, depth_to_flat, depth_to_pgm,
                            load_depth_pgm, load_intrinsics, format_intrinsics,
                            mask_to_pgm, passthrough_filter)

from conftest import make_pgm, frame_of


class TestLoadDepth:
    def test_pgm_16bit_values(self):
        frame = load_depth_pgm(make_pgm(2, 2, [800, 0, 4000, 1200]))
        assert frame.width == 2 and frame.height == 2
        np.testing.assert_array_equal(frame.data, [[800, 0], [4000, 1200]])

    def test_truncated_payload(self):
        blob = make_pgm(2, 2, [800, 0, 4000, 1200])[:-3]
        with pytest.raises(DepthFormatError, match="truncated"):
            load_depth_pgm(blob)

    def test_single_invalid_pixel(self):
        frame = load_depth_pgm(make_pgm(1, 1, [0]))
        assert frame.valid_mask.sum() == 0

    def test_8bit_maxval(self):
        frame = load_depth_pgm(make_pgm(2, 1, [7, 255], maxval=255))
        np.testing.assert_array_equal(frame.data, [[7, 255]])

    def test_maxval_too_large(self):
        blob = b"P5\n1 1\n70000\n" + b"\x00\x00\x00"
        with pytest.raises(DepthFormatError, match="maxval"):
            load_depth_pgm(blob)

    def test_header_comment(self):
        blob = b"P5\n# device dump\n2 1\n255\n" + bytes([3, 4])
        frame = load_depth_pgm(blob)
        np.testing.assert_array_equal(frame.data, [[3, 4]])

    def test_unknown_format(self):
        with pytest.raises(DepthFormatError):
            load_depth_pgm(b"BM123456")

    def test_flat_roundtrip(self):
        frame = frame_of([[1, 2], [65535, 0]])
        again = load_depth_pgm(depth_to_flat(frame))
        assert again == frame

    def test_flat_truncated(self):
        blob = depth_to_flat(frame_of([[1, 2], [3, 4]]))[:-1]
        with pytest.raises(DepthFormatError, match="truncated"):
            load_depth_pgm(blob)

    def test_pgm_roundtrip(self):
        frame = frame_of(np.arange(12).reshape(3, 4) * 999)
        assert load_depth_pgm(depth_to_pgm(frame)) == frame

    def test_mask_pgm(self):
        blob = mask_to_pgm(np.array([[True, False]]))
        assert blob.endswith(bytes([255, 0]))


class TestIntrinsicsFile:
    def test_parse(self):
        k = load_intrinsics("fx=500\nfy=510\ncx=320\ncy=240\ndepth_scale=2\n")
        assert (k.fx, k.fy, k.cx, k.cy, k.depth_scale) == (500, 510, 320, 240, 2)

    def test_depth_scale_optional(self):
        k = load_intrinsics("fx=500\nfy=510\ncx=320\ncy=240")
        assert k.depth_scale == 1.0

    def test_missing_key(self):
        with pytest.raises(DepthFormatError, match="missing"):
            load_intrinsics("fx=500\nfy=510\ncx=320\n")

    def test_unknown_key(self):
        with pytest.raises(DepthFormatError, match="unknown"):
            load_intrinsics("fx=1\nfy=1\ncx=0\ncy=0\nskew=3\n")

    def test_roundtrip(self):
        k = Intrinsics(575.8, 575.8, 319.5, 239.5)
        assert load_intrinsics(format_intrinsics(k)) == k

    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1, fy=1, cx=0, cy=0)
        with pytest.raises(ValueError):
            Intrinsics(fx=1, fy=1, cx=0, cy=0, depth_scale=0)


class TestBackproject:
    k = Intrinsics(fx=100.0, fy=100.0, cx=2.0, cy=1.0)

    def test_principal_ray(self):
        data = np.zeros((3, 5), dtype=np.uint16)
        data[1, 2] = 1000  # pixel at (cx, cy)
        pts = backproject(DepthFrame(data), self.k)
        np.testing.assert_allclose(pts, [[0.0, 0.0, 1000.0]])

    def test_one_focal_length_right(self):
        # (u, v) = (cx + fx, cy) -> x = fx * z / fx = z
        k = Intrinsics(fx=2.0, fy=2.0, cx=1.0, cy=1.0)
        data = np.zeros((3, 5), dtype=np.uint16)
        data[1, 3] = 1000
        pts = backproject(DepthFrame(data), k)
        np.testing.assert_allclose(pts, [[1000.0, 0.0, 1000.0]])

    def test_all_zero_frame(self):
        pts = backproject(DepthFrame(np.zeros((4, 4), dtype=np.uint16)), self.k)
        assert pts.shape == (0, 3)

    def test_count_matches_nonzero(self):
        rng = np.random.default_rng(0)
        data = rng.integers(0, 3, size=(20, 30)).astype(np.uint16) * 700
        pts = backproject(DepthFrame(data), Intrinsics(100, 100, 14.5, 9.5))
        assert len(pts) == np.count_nonzero(data)

    def test_row_major_order(self):
        data = np.zeros((2, 2), dtype=np.uint16)
        data[0, 1] = 100
        data[1, 0] = 200
        pts = backproject(DepthFrame(data), Intrinsics(10, 10, 0.5, 0.5))
        assert pts[0, 2] == 100 and pts[1, 2] == 200

    def test_y_axis_points_up(self):
        # row below the principal point must map to negative y
        data = np.zeros((3, 3), dtype=np.uint16)
        data[2, 1] = 500
        pts = backproject(DepthFrame(data), Intrinsics(10, 10, 1.0, 1.0))
        assert pts[0, 1] < 0

    def test_depth_scale(self):
        data = np.full((1, 1), 500, dtype=np.uint16)
        k = Intrinsics(fx=10, fy=10, cx=0.0, cy=0.0, depth_scale=2.0)
        pts = backproject(DepthFrame(data), k)
        assert pts[0, 2] == 1000.0

    def test_principal_point_outside_image(self):
        with pytest.raises(ValueError, match="principal point"):
            backproject(DepthFrame(np.ones((2, 2), dtype=np.uint16)),
                        Intrinsics(10, 10, 5.0, 1.0))

    def test_reprojection_recovers_pixels(self):
        rng = np.random.default_rng(7)
        data = rng.integers(500, 5000, size=(24, 32)).astype(np.uint16)
        k = Intrinsics(fx=40.0, fy=36.0, cx=15.5, cy=11.5)
        pts = backproject(DepthFrame(data), k)
        vs, us = np.nonzero(data)
        u_back = pts[:, 0] * k.fx / pts[:, 2] + k.cx
        v_back = k.cy - pts[:, 1] * k.fy / pts[:, 2]
        np.testing.assert_allclose(u_back, us, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(v_back, vs, rtol=1e-9, atol=1e-9)


class TestPassthrough:
    def test_below_band_removed(self):
        cloud = np.array([[0.0, 0.0, 500.0]])
        assert passthrough_filter(cloud, 800, 4000).shape == (0, 3)

    def test_boundaries_inclusive(self):
        cloud = np.array([[0, 0, 800.0], [0, 0, 4000.0], [0, 0, 4000.5]])
        out = passthrough_filter(cloud, 800, 4000)
        np.testing.assert_array_equal(out[:, 2], [800.0, 4000.0])

    def test_empty_cloud(self):
        assert passthrough_filter(np.zeros((0, 3)), 800, 4000).shape == (0, 3)

    def test_bad_band(self):
        with pytest.raises(ValueError):
            passthrough_filter(np.zeros((0, 3)), 4000, 800)

    @given(st.lists(st.floats(0.0, 10000.0), max_size=40))
    def test_subsequence_and_idempotent(self, zs):
        cloud = np.array([[i, -i, z] for i, z in enumerate(zs)]).reshape(-1, 3)
        once = passthrough_filter(cloud, 800, 4000)
        twice = passthrough_filter(once, 800, 4000)
        np.testing.assert_array_equal(once, twice)
        # order-preserving subsequence: x carries the original index
        kept = once[:, 0].astype(int).tolist()
        assert kept == sorted(kept)
        assert all(800 <= z <= 4000 for z in once[:, 2])

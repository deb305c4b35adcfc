"""Hull, area, and percentile-height features; hull checked against an
all-pairs half-plane oracle."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hapmap.geomfeat import (GeometricClass, GeometryThresholds, classify_geometry,
                             convex_hull_2d, footprint, height_p90, polygon_area)


def brute_hull_vertices(pts):
    """O(n^3): (i, j) is a hull edge iff every point sits left of i->j."""
    n = len(pts)
    verts = set()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = pts - pts[i]
            cross = (pts[j, 0] - pts[i, 0]) * d[:, 1] - (pts[j, 1] - pts[i, 1]) * d[:, 0]
            if np.all(cross >= 0):
                verts.add(i)
                verts.add(j)
    return {tuple(pts[i]) for i in verts}


def point_in_hull(hull, p, tol=1e-9):
    """Left-of-every-edge test for a counter-clockwise hull."""
    n = len(hull)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross < -tol:
            return False
    return True


class TestConvexHull:
    def test_square_with_interior(self):
        rng = np.random.default_rng(0)
        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        pts = np.vstack([corners, rng.uniform(0.1, 0.9, size=(30, 2))])
        hull = convex_hull_2d(pts)
        assert {tuple(p) for p in hull} == {tuple(c) for c in corners}

    def test_counter_clockwise_and_convex(self):
        rng = np.random.default_rng(1)
        hull = convex_hull_2d(rng.normal(0, 100, size=(50, 2)))
        n = len(hull)
        for i in range(n):
            a, b, c = hull[i], hull[(i + 1) % n], hull[(i + 2) % n]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            assert cross > 0   # strictly: no collinear vertices survive

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            pts = rng.uniform(-500, 500, size=(100, 2))
            hull = convex_hull_2d(pts)
            assert {tuple(p) for p in hull} == brute_hull_vertices(pts)

    def test_two_points_degenerate(self):
        hull = convex_hull_2d(np.array([[0.0, 0.0], [1.0, 1.0]]))
        assert hull.shape[0] < 3

    def test_collinear_degenerate(self):
        hull = convex_hull_2d(np.array([[0, 0], [1, 1], [2, 2], [3, 3]], dtype=float))
        assert hull.shape[0] < 3

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)),
                    min_size=3, max_size=60))
    def test_idempotent_and_contains_all(self, coords):
        pts = np.array(coords)
        hull = convex_hull_2d(pts)
        if hull.shape[0] < 3:
            return
        np.testing.assert_allclose(convex_hull_2d(hull), hull)
        assert all(point_in_hull(hull, p, tol=1e-6) for p in pts)


class TestPolygonArea:
    def test_one_square_meter(self):
        square = np.array([[0, 0], [1000, 0], [1000, 1000], [0, 1000]], dtype=float)
        assert polygon_area(square) == pytest.approx(1.0)

    def test_half_square_triangle(self):
        tri = np.array([[0, 0], [1000, 0], [0, 1000]], dtype=float)
        assert polygon_area(tri) == pytest.approx(0.5)

    def test_degenerate_zero(self):
        assert polygon_area(np.array([[0.0, 0.0], [5.0, 5.0]])) == 0.0

    def test_ring_rotation_invariant(self):
        poly = np.array([[0, 0], [800, 0], [900, 600], [100, 700]], dtype=float)
        base = polygon_area(poly)
        for shift in range(1, 4):
            assert polygon_area(np.roll(poly, shift, axis=0)) == pytest.approx(base)

    @settings(max_examples=30)
    @given(st.floats(0, 2 * np.pi), st.floats(-5e3, 5e3), st.floats(-5e3, 5e3))
    def test_rigid_motion_invariant(self, angle, tx, tz):
        poly = np.array([[0, 0], [800, 0], [900, 600], [100, 700]], dtype=float)
        c, s = np.cos(angle), np.sin(angle)
        moved = poly @ np.array([[c, s], [-s, c]]) + [tx, tz]
        assert polygon_area(moved) == pytest.approx(polygon_area(poly), rel=1e-9)


class TestHeightP90:
    def test_hundred_heights(self):
        # heights 0, 10, ..., 990: ceil(0.9 * 100) = 90 -> sorted[89] = 890
        pts = np.zeros((100, 3))
        pts[:, 1] = np.arange(100) * 10.0
        assert height_p90(pts, ground_y=0.0) == 890.0

    def test_single_point(self):
        assert height_p90(np.array([[0, 500.0, 0]]), 0.0) == 500.0

    def test_all_equal(self):
        pts = np.zeros((7, 3))
        pts[:, 1] = 321.0
        assert height_p90(pts, 0.0) == 321.0

    def test_ground_offset(self):
        pts = np.array([[0, -700.0, 0], [0, -650.0, 0]])
        assert height_p90(pts, ground_y=-1200.0) == 550.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            height_p90(np.zeros((0, 3)), 0.0)


class TestClassifyGeometry:
    def test_chair_like(self):
        g = classify_geometry(850.0, 0.16)
        assert (g.height_class, g.area_class) == (2, 1)

    def test_bed_like(self):
        g = classify_geometry(500.0, 3.0)
        assert (g.height_class, g.area_class) == (2, 3)

    def test_boundary_inclusive(self):
        assert classify_geometry(400.0, 0.25).height_class == 2
        assert classify_geometry(400.0, 0.25).area_class == 2
        assert classify_geometry(1000.0, 1.0) == GeometricClass(3, 3, 1000.0, 1.0)

    def test_monotone_in_height(self):
        heights = np.linspace(0, 2000, 60)
        classes = [classify_geometry(h, 0.5).height_class for h in heights]
        assert classes == sorted(classes)

    def test_custom_thresholds(self):
        thr = GeometryThresholds(height_mm=(300, 800), area_m2=(0.1, 0.5))
        assert classify_geometry(350, 0.05, thr).height_class == 2
        with pytest.raises(ValueError):
            GeometryThresholds(height_mm=(800, 300))


class TestFootprint:
    def test_barycenter_is_centroid(self):
        rng = np.random.default_rng(3)
        pts = rng.normal((100, -600, 2500), 80, size=(200, 3))
        fp = footprint(pts)
        np.testing.assert_allclose(fp.barycenter, pts.mean(axis=0))
        assert not fp.degenerate
        assert fp.area_m2 > 0

    def test_degenerate_line(self):
        pts = np.array([[0, 0, 0], [0, 5, 0], [0, 9, 0]], dtype=float)
        fp = footprint(pts)
        assert fp.degenerate and fp.area_m2 == 0.0

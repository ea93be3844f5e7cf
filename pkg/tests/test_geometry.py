import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarfield.geometry import (
    Aabb,
    RayInterval,
    inflate,
    iou,
    ray_aabb_intersect,
    sphere_prefilter,
)

from helpers import brute_force_ray_box

UNIT_BOX = Aabb(np.zeros(3), np.ones(3))


class TestSlabTest:
    def test_axis_hit(self):
        hit = ray_aabb_intersect(np.array([-1.0, 0.5, 0.5]), np.array([1.0, 0, 0]), UNIT_BOX)
        assert hit == RayInterval(1.0, 2.0)

    def test_miss_outside_slab(self):
        assert ray_aabb_intersect(np.array([-1.0, 5.0, 0.5]), np.array([1.0, 0, 0]), UNIT_BOX) is None

    def test_origin_inside_clamps_to_zero(self):
        hit = ray_aabb_intersect(np.array([0.5, 0.5, 0.5]), np.array([1.0, 0, 0]), UNIT_BOX)
        assert hit == RayInterval(0.0, 0.5)

    def test_behind_ray_misses(self):
        assert ray_aabb_intersect(np.array([2.0, 0.5, 0.5]), np.array([1.0, 0, 0]), UNIT_BOX) is None

    def test_degenerate_box(self):
        flat = Aabb(np.array([0, 0, 0.5]), np.array([1, 1, 0.5]))
        hit = ray_aabb_intersect(np.array([0.5, 0.5, -1.0]), np.array([0, 0, 1.0]), flat)
        assert hit is not None and abs(hit.t_enter - 1.5) < 1e-12

    def test_parallel_inside_slab(self):
        hit = ray_aabb_intersect(np.array([-1.0, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), UNIT_BOX)
        assert hit is not None  # dir has two zero components

    def test_non_unit_dir_rejected(self):
        with pytest.raises(ValueError):
            ray_aabb_intersect(np.zeros(3), np.array([2.0, 0, 0]), UNIT_BOX)


def _random_case(rng):
    origin = rng.uniform(-5, 5, 3)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    lo = rng.uniform(-4, 4, 3)
    hi = lo + rng.uniform(0.2, 4.0, 3)
    return origin, d, Aabb(lo, hi)


class TestSlabVsOracle:
    def test_agreement_with_dense_sampling(self):
        rng = np.random.default_rng(42)
        t_max, n = 30.0, 4000
        spacing = t_max / n
        for _ in range(500):
            origin, d, box = _random_case(rng)
            got = ray_aabb_intersect(origin, d, box)
            hit, t_first, t_last = brute_force_ray_box(
                origin, d, box.min_corner, box.max_corner, 0.0, t_max, n
            )
            if got is None:
                assert not hit
            else:
                assert hit
                assert abs(got.t_enter - t_first) <= 2 * spacing
                assert abs(got.t_exit - t_last) <= 2 * spacing


class TestSpherePrefilter:
    def test_through_centroid(self):
        assert sphere_prefilter(np.array([-3.0, 0.5, 0.5]), np.array([1.0, 0, 0]), UNIT_BOX)

    def test_far_ray_rejected(self):
        assert not sphere_prefilter(np.array([-3.0, 50.0, 0.5]), np.array([1.0, 0, 0]), UNIT_BOX)

    def test_superset_of_slab_test(self):
        rng = np.random.default_rng(7)
        for _ in range(2000):
            origin, d, box = _random_case(rng)
            if ray_aabb_intersect(origin, d, box) is not None:
                assert sphere_prefilter(origin, d, box)


class TestInflate:
    def test_zero_step(self):
        out = inflate(UNIT_BOX, 0.0)
        np.testing.assert_array_equal(out.min_corner, UNIT_BOX.min_corner)
        np.testing.assert_array_equal(out.max_corner, UNIT_BOX.max_corner)

    def test_half_step(self):
        out = inflate(UNIT_BOX, 0.5)
        np.testing.assert_array_equal(out.min_corner, [-0.5] * 3)
        np.testing.assert_array_equal(out.max_corner, [1.5] * 3)

    def test_volume_monotone(self):
        assert inflate(UNIT_BOX, 0.3).volume >= UNIT_BOX.volume

    @given(st.floats(0, 3), st.floats(0, 3))
    @settings(max_examples=50)
    def test_additive(self, a, c):
        once = inflate(inflate(UNIT_BOX, a), c)
        combined = inflate(UNIT_BOX, a + c)
        np.testing.assert_allclose(once.min_corner, combined.min_corner, atol=1e-12)
        np.testing.assert_allclose(once.max_corner, combined.max_corner, atol=1e-12)

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            inflate(UNIT_BOX, -0.1)


class TestAabb:
    def test_inverted_corners_rejected(self):
        with pytest.raises(ValueError):
            Aabb(np.ones(3), np.zeros(3))

    def test_iou_identical(self):
        assert iou(UNIT_BOX, UNIT_BOX) == pytest.approx(1.0)

    def test_iou_disjoint(self):
        other = Aabb(np.array([5.0, 5, 5]), np.array([6.0, 6, 6]))
        assert iou(UNIT_BOX, other) == 0.0

    def test_clipped_to(self):
        big = Aabb(np.array([-2.0, -2, -2]), np.array([0.5, 0.5, 0.5]))
        clipped = big.clipped_to(UNIT_BOX)
        np.testing.assert_array_equal(clipped.min_corner, np.zeros(3))
        np.testing.assert_array_equal(clipped.max_corner, [0.5] * 3)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarfield.losses import (
    LossWeights,
    child_depth_loss,
    child_free_loss,
    parent_depth_loss,
    smooth_l1_prime,
    total_loss,
)
from lidarfield.partition import LidarRay
from lidarfield.render import RayBounds, RaySamples


def _samples(t, w, upper=None):
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    delta = np.concatenate([np.diff(t), [max((upper or t[-1] + 1) - t[-1], 1e-9)]])
    return RaySamples(t, delta, np.zeros_like(t), w)


class TestSmoothL1Prime:
    def test_coincidence(self):
        assert smooth_l1_prime(3.0, 3.0) == 0.0

    def test_quadratic_branch(self):
        assert smooth_l1_prime(1.05, 1.0) == pytest.approx(0.0125, abs=1e-15)

    def test_linear_branch(self):
        assert smooth_l1_prime(2.0, 1.0) == pytest.approx(0.95, abs=1e-15)

    def test_continuity_at_turning_point(self):
        quad = 5.0 * 0.1**2
        lin = 0.1 - 0.05
        assert abs(quad - lin) < 1e-12
        below = smooth_l1_prime(0.1 - 1e-9, 0.0)
        above = smooth_l1_prime(0.1 + 1e-9, 0.0)
        assert abs(below - above) < 1e-8

    @given(st.floats(-50, 50), st.floats(-50, 50))
    @settings(max_examples=100)
    def test_symmetric(self, x, y):
        assert smooth_l1_prime(x, y) == smooth_l1_prime(y, x)

    def test_scaled_smooth_l1_identity(self):
        # equals 0.1 * SmoothL1(10x, 10y) with the standard beta=1 definition
        rng = np.random.default_rng(0)
        for x, y in rng.uniform(-5, 5, (50, 2)):
            d = abs(10 * x - 10 * y)
            ref = 0.1 * (0.5 * d * d if d < 1 else d - 0.5)
            assert smooth_l1_prime(x, y) == pytest.approx(ref, rel=1e-12)


class TestParentDepthLoss:
    def test_exact_match_is_zero(self):
        s = _samples([10.0], [1.0], upper=50.0)
        assert parent_depth_loss(s, RayBounds(0.0, 50.0), 10.0) == 0.0

    def test_zero_weights(self):
        s = _samples([5.0, 20.0], [0.0, 0.0], upper=50.0)
        loss = parent_depth_loss(s, RayBounds(0.0, 50.0), 10.0)
        assert loss == pytest.approx(smooth_l1_prime(0.0, 10.0)) == pytest.approx(9.95)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            t = np.sort(rng.uniform(0, 50, 16))
            w = rng.uniform(0, 1, 16)
            w /= max(w.sum(), 1.0)
            s = _samples(t, w, upper=50.0)
            assert parent_depth_loss(s, RayBounds(0.0, 50.0), rng.uniform(0, 50)) >= 0.0


class TestChildFreeLoss:
    def _bounds(self, eps=0.5):
        return RayBounds(0.0, 50.0, n_c=10.0, f_c=12.0, eps=eps)

    def test_zero_weights(self):
        t = np.linspace(0.5, 49.5, 50)
        s = _samples(t, np.zeros(50), upper=50.0)
        assert child_free_loss(s, self._bounds()) == 0.0

    def test_constant_weight_riemann_limit(self):
        # constant per-node weight c over free span of length ~ell gives c^2 * ell
        n = 1000
        t = np.linspace(0.0, 50.0, n, endpoint=False)
        c = 3e-4
        w = np.full(n, c)
        bounds = self._bounds(eps=0.5)
        s = _samples(t, w, upper=50.0)
        free_len = (10.0 - 0.5) + (50.0 - 12.5)
        assert child_free_loss(s, bounds) == pytest.approx(c * c * free_len, rel=2e-2)

    def test_weight_inside_child_ignored(self):
        t = np.array([10.5, 11.0, 11.5])
        s = _samples(t, np.array([0.3, 0.5, 0.2]), upper=50.0)
        assert child_free_loss(s, self._bounds()) == 0.0

    def test_requires_child(self):
        s = _samples([1.0], [0.1], upper=50.0)
        with pytest.raises(ValueError):
            child_free_loss(s, RayBounds(0.0, 50.0))


class TestChildDepthLoss:
    def test_concentrated_weight_at_measurement(self):
        bounds = RayBounds(0.0, 50.0, n_c=9.0, f_c=11.0, eps=0.5, gamma=1.0)
        s = _samples([10.0], [1.0], upper=50.0)
        assert child_depth_loss(s, bounds, 10.0) == 0.0

    def test_split_weights_rendering_to_measurement(self):
        bounds = RayBounds(0.0, 50.0, n_c=9.0, f_c=11.0, eps=0.5, gamma=0.0)
        s = _samples([9.96, 10.04], [0.5, 0.5], upper=50.0)
        assert child_depth_loss(s, bounds, 10.0) == pytest.approx(0.0, abs=1e-12)

    def test_gamma_covering_ray_equals_parent_loss(self):
        rng = np.random.default_rng(2)
        t = np.sort(rng.uniform(0, 50, 64))
        w = rng.uniform(0, 0.02, 64)
        s = _samples(t, w, upper=50.0)
        bounds = RayBounds(0.0, 50.0, n_c=20.0, f_c=22.0, eps=0.5, gamma=50.0)
        d = 21.0
        assert child_depth_loss(s, bounds, d) == parent_depth_loss(s, RayBounds(0.0, 50.0), d)


class TestTotalLoss:
    def _ray(self, child):
        return LidarRay(np.zeros(3), np.array([10.0, 0, 0]), 10.0, np.array([1.0, 0, 0]), child)

    def test_paper_default_composition(self):
        lw = LossWeights()  # lambda = (1, 1e6, 1e5)
        assert (lw.lambda_pd, lw.lambda_cf, lw.lambda_cd) == (1.0, 1.0e6, 1.0e5)
        bounds = RayBounds(0.0, 50.0, n_c=9.0, f_c=11.0, eps=0.5, gamma=2.0)
        t = np.linspace(0.5, 49.5, 99)
        w = np.where((t > 9) & (t < 11), 0.4, 1e-4)
        s = _samples(t, w, upper=50.0)
        expect = (
            lw.lambda_pd * parent_depth_loss(s, bounds, 10.0)
            + lw.lambda_cf * child_free_loss(s, bounds)
            + lw.lambda_cd * child_depth_loss(s, bounds, 10.0)
        )
        assert total_loss(self._ray(3), s, bounds, lw) == pytest.approx(expect)

    def test_all_components_zero(self):
        bounds = RayBounds(0.0, 50.0, n_c=9.0, f_c=11.0, eps=0.5, gamma=2.0)
        s = _samples([10.0], [1.0], upper=50.0)
        assert total_loss(self._ray(3), s, bounds, LossWeights()) == 0.0

    def test_lambda_linearity(self):
        bounds = RayBounds(0.0, 50.0, n_c=9.0, f_c=11.0, eps=0.5, gamma=2.0)
        t = np.linspace(0.5, 49.5, 99)
        w = np.where((t > 9) & (t < 11), 0.3, 2e-4)
        s = _samples(t, w, upper=50.0)
        one = total_loss(self._ray(3), s, bounds, LossWeights(lambda_pd=1, lambda_cf=10, lambda_cd=5))
        two = total_loss(self._ray(3), s, bounds, LossWeights(lambda_pd=2, lambda_cf=20, lambda_cd=10))
        assert two == pytest.approx(2 * one)

    def test_no_child_only_parent_term(self):
        bounds = RayBounds(0.0, 50.0)
        s = _samples([8.0], [1.0], upper=50.0)
        expect = parent_depth_loss(s, bounds, 10.0)
        assert total_loss(self._ray(None), s, bounds, LossWeights()) == pytest.approx(expect)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_cf=-1.0)

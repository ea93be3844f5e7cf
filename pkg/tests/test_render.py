import numpy as np
import pytest

from lidarfield.render import (
    RayBounds,
    RaySamples,
    SamplingConfig,
    compute_weights,
    deltas_from_nodes,
    hierarchical_fine_sample,
    integrate_weight,
    render_depth,
    segmented_sample,
)

from helpers import slab_analytic_depth, slab_analytic_weight


class TestComputeWeights:
    def test_transparent_medium(self):
        w = compute_weights(np.zeros(8), np.full(8, 0.5))
        np.testing.assert_array_equal(w, np.zeros(8))

    def test_opaque_first_sample(self):
        w = compute_weights(np.array([1e6, 1.0, 1.0]), np.ones(3))
        assert w[0] == pytest.approx(1.0)
        assert np.all(w[1:] < 1e-12)

    def test_closed_form_pair(self):
        w = compute_weights(np.array([1.0, 1.0]), np.array([1.0, 1.0]))
        e = np.exp(-1.0)
        np.testing.assert_allclose(w, [1 - e, e * (1 - e)], rtol=1e-12)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            compute_weights(np.array([-1.0]), np.array([1.0]))

    def test_split_invariance(self):
        # splitting one interval in two with the same total optical depth
        # preserves every downstream weight and the split pair's sum
        sigma = np.array([0.3, 0.8, 0.2, 0.5])
        delta = np.array([1.0, 2.0, 1.5, 1.0])
        w = compute_weights(sigma, delta)
        sigma2 = np.array([0.3, 0.8, 0.8, 0.2, 0.5])
        delta2 = np.array([1.0, 0.75, 1.25, 1.5, 1.0])
        w2 = compute_weights(sigma2, delta2)
        assert abs((w2[1] + w2[2]) - w[1]) < 1e-9
        np.testing.assert_allclose(w2[[0, 3, 4]], w[[0, 2, 3]], atol=1e-9)

    def test_prefix_truncation_non_increasing(self):
        rng = np.random.default_rng(5)
        sigma = rng.uniform(0, 3, 32)
        delta = rng.uniform(0.01, 0.5, 32)
        w = compute_weights(sigma, delta)
        sums = np.cumsum(w)
        assert np.all(np.diff(sums) >= -1e-15)
        assert sums[-1] <= 1.0 + 1e-6


class TestRenderDepth:
    def _samples(self, t, w):
        t = np.asarray(t, dtype=float)
        return RaySamples(t, np.ones_like(t), np.zeros_like(t), np.asarray(w, dtype=float))

    def test_single_node(self):
        assert render_depth(self._samples([5.0], [1.0]), (0.0, 10.0)) == 5.0

    def test_weighted_sum(self):
        s = self._samples([4.0, 5.0], [0.2, 0.6])
        assert render_depth(s, (0.0, 10.0)) == pytest.approx(3.8)

    def test_symmetric_weights_give_midpoint_times_mass(self):
        t = np.array([2.0, 3.0, 5.0, 6.0])
        w = np.array([0.1, 0.25, 0.25, 0.1])
        s = self._samples(t, w)
        assert render_depth(s, (0.0, 8.0)) == pytest.approx(4.0 * w.sum())

    def test_interval_restriction(self):
        s = self._samples([1.0, 5.0, 9.0], [0.2, 0.3, 0.4])
        assert render_depth(s, (4.0, 6.0)) == pytest.approx(1.5)

    def test_integrate_weight_definitions(self):
        s = self._samples([1.0, 5.0, 9.0], [0.2, 0.3, 0.4])
        assert integrate_weight(s, (0.0, 10.0)) == pytest.approx(0.9)
        assert integrate_weight(s, (4.0, 9.0)) == pytest.approx(0.7)

    def test_zero_density_weight(self):
        s = RaySamples.from_sigma(np.linspace(0, 9, 10), np.zeros(10), 10.0)
        assert integrate_weight(s, (0.0, 10.0)) == 0.0


class TestSegmentedSample:
    def test_guaranteed_in_child(self):
        rng = np.random.default_rng(0)
        bounds = RayBounds(0.0, 50.0, n_c=20.0, f_c=21.0, eps=0.0)
        for _ in range(50):
            nodes = segmented_sample(bounds, 10, 0.1, rng)
            assert nodes.shape == (10,)
            assert np.sum((nodes >= 20.0) & (nodes <= 21.0)) >= 1

    def test_no_child_plain_stratified(self):
        rng = np.random.default_rng(1)
        nodes = segmented_sample(RayBounds(0.0, 10.0), 20, 0.1, rng)
        # one node per stratum of [0, 10]
        assert np.all(np.floor(nodes * 2) == np.arange(20))

    def test_sorted_and_in_bounds(self):
        rng = np.random.default_rng(2)
        bounds = RayBounds(0.0, 30.0, n_c=5.0, f_c=7.0, eps=0.5)
        for _ in range(1000):
            nodes = segmented_sample(bounds, 16, 0.25, rng)
            assert np.all(np.diff(nodes) > 0)
            assert nodes[0] >= 0.0 and nodes[-1] <= 30.0

    def test_eps_inflates_child_interval(self):
        rng = np.random.default_rng(3)
        bounds = RayBounds(0.0, 50.0, n_c=20.0, f_c=20.5, eps=1.0)
        hits = 0
        for _ in range(200):
            nodes = segmented_sample(bounds, 10, 0.1, rng)
            hits += np.sum((nodes >= 19.0) & (nodes < 20.0))
        assert hits > 0  # inflated region below n_c receives samples

    def test_clipping_against_parent(self):
        bounds = RayBounds(0.0, 10.0, n_c=9.5, f_c=15.0)
        assert bounds.f_c == 10.0


class TestFineSample:
    def test_concentrates_on_heavy_bin(self):
        rng = np.random.default_rng(4)
        t = np.linspace(0.0, 9.0, 10)
        w = np.zeros(10)
        w[4] = 1.0  # all mass in bin [4, 5)
        fine = hierarchical_fine_sample(t, w, 64, rng, upper=10.0)
        new = np.setdiff1d(fine, t)
        frac_inside = np.mean((new >= 4.0) & (new <= 5.0))
        assert frac_inside > 0.95  # floor leaks a few nodes elsewhere

    def test_uniform_weights_spread(self):
        rng = np.random.default_rng(5)
        t = np.linspace(0.0, 9.0, 10)
        counts = np.zeros(10)
        for _ in range(200):
            fine = hierarchical_fine_sample(t, np.ones(10), 16, rng, upper=10.0)
            new = np.setdiff1d(fine, t)
            counts += np.histogram(new, bins=np.arange(11))[0]
        assert counts.std() / counts.mean() < 0.15

    def test_zero_weights_fall_back_to_floor(self):
        rng = np.random.default_rng(6)
        t = np.linspace(0.0, 9.0, 10)
        fine = hierarchical_fine_sample(t, np.zeros(10), 400, rng, upper=10.0)
        new = np.setdiff1d(fine, t)
        counts = np.histogram(new, bins=np.arange(11))[0]
        assert counts.min() > 0  # floor spreads nodes over every bin

    def test_merged_and_sorted(self):
        rng = np.random.default_rng(7)
        t = np.linspace(0.0, 9.0, 10)
        fine = hierarchical_fine_sample(t, np.ones(10), 16, rng, upper=10.0)
        assert fine.shape == (26,)
        assert np.all(np.diff(fine) >= 0)


class TestQuadratureConvergence:
    def test_error_halves_per_doubling(self):
        # opaque slab on [9.5, 10.5] with sigma 4, parent [0, 50]; node counts
        # keep the slab edges on stratum boundaries so the O(delta) term is
        # isolated from grid-alignment oscillation
        sigma0, a, b = 4.0, 9.5, 10.5
        truth_d = slab_analytic_depth(a, b, sigma0)
        truth_w = slab_analytic_weight(a, b, sigma0)
        errors_d, errors_w = [], []
        for n in (200, 400, 800, 1600):
            t = np.linspace(0.0, 50.0, n, endpoint=False) + 25.0 / n
            sig = np.where((t >= a) & (t <= b), sigma0, 0.0)
            s = RaySamples.from_sigma(t, sig, 50.0)
            errors_d.append(abs(render_depth(s, (0.0, 50.0)) - truth_d))
            errors_w.append(abs(integrate_weight(s, (a, b)) - truth_w))
        for coarse, fine in zip(errors_d, errors_d[1:]):
            assert fine <= 0.5 * coarse + 1e-12
        assert errors_w[-1] <= 1e-12  # aligned grids integrate W exactly

    def test_opaque_slab_weight_saturates(self):
        t = np.linspace(0.0, 50.0, 2000, endpoint=False)
        sig = np.where((t >= 9.5) & (t <= 10.5), 50.0, 0.0)
        s = RaySamples.from_sigma(t, sig, 50.0)
        assert integrate_weight(s, (9.5, 10.5)) >= 1.0 - 1e-3


def test_deltas_from_nodes_remainder():
    t = np.array([[0.0, 1.0, 4.0]])
    delta = deltas_from_nodes(t, np.array([10.0]))
    np.testing.assert_allclose(delta, [[1.0, 3.0, 6.0]])


def test_sampling_config_validation():
    with pytest.raises(ValueError):
        SamplingConfig(n_coarse=1)
    with pytest.raises(ValueError):
        SamplingConfig(lambda_in=1.5)

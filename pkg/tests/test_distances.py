import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segadapt.distances import (
    exact_wasserstein,
    sliced_wasserstein,
    wasserstein_1d,
)
from segadapt.errors import InvalidInputError, UnsupportedInstanceError


def brute_force_wasserstein(p, q, order):
    """Minimum matching cost over all n! permutations."""
    p, q = np.atleast_2d(p.T).T if p.ndim == 1 else p, q
    n = p.shape[0]
    cost = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2) ** order
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float((totals.min() / n) ** (1.0 / order))


class TestWasserstein1d:
    def test_identical_samples_zero(self):
        for order in (1, 2, 3):
            assert wasserstein_1d([3, 7, 9], [3, 7, 9], order) == 0.0

    def test_two_point_shift(self):
        # sorted matching cost (1^2 + 1^2)/2 = 1
        assert wasserstein_1d([0, 1], [1, 2], 2) == pytest.approx(1.0)

    def test_single_point_translation(self):
        assert wasserstein_1d([0], [5], 1) == pytest.approx(5.0)

    def test_unsorted_input_handled(self):
        assert wasserstein_1d([9, 3, 7], [7, 9, 3], 2) == 0.0

    def test_unequal_sizes_equal_distributions(self):
        # {0, 1} and {0, 0, 1, 1} are the same empirical distribution
        assert wasserstein_1d([0, 1], [0, 0, 1, 1], 2) == 0.0

    def test_matches_brute_force_equal_sizes(self):
        rng = np.random.default_rng(0)
        for order in (1, 2):
            for _ in range(20):
                n = int(rng.integers(1, 8))
                a, b = rng.normal(size=n), rng.normal(size=n)
                expected = brute_force_wasserstein(a[:, None], b[:, None], order)
                assert wasserstein_1d(a, b, order) == pytest.approx(expected, abs=1e-9)

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=10),
        st.lists(st.floats(-100, 100), min_size=1, max_size=10),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetry_and_nonnegativity(self, a, b):
        d_ab = wasserstein_1d(a, b, 2)
        d_ba = wasserstein_1d(b, a, 2)
        assert d_ab == d_ba
        assert d_ab >= 0.0

    def test_triangle_inequality_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            a, b, c = (rng.normal(size=n) for _ in range(3))
            assert wasserstein_1d(a, c, 2) <= (
                wasserstein_1d(a, b, 2) + wasserstein_1d(b, c, 2) + 1e-9
            )

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(InvalidInputError):
            wasserstein_1d([], [1.0], 2)
        with pytest.raises(InvalidInputError):
            wasserstein_1d([np.nan], [1.0], 2)


class TestExactWasserstein:
    def test_identical_sets(self):
        p = np.random.default_rng(1).normal(size=(10, 3))
        assert exact_wasserstein(p, p, 2) == 0.0

    def test_single_pair_euclidean(self):
        assert exact_wasserstein([[0, 0]], [[3, 4]], 2) == pytest.approx(5.0)

    def test_matches_factorial_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            dim = int(rng.integers(1, 4))
            p, q = rng.normal(size=(n, dim)), rng.normal(size=(n, dim))
            for order in (1, 2):
                assert exact_wasserstein(p, q, order) == pytest.approx(
                    brute_force_wasserstein(p, q, order), abs=1e-9
                )

    def test_metric_properties(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p, q, r = (rng.normal(size=(6, 2)) for _ in range(3))
            d_pq = exact_wasserstein(p, q, 2)
            assert d_pq == pytest.approx(exact_wasserstein(q, p, 2), abs=1e-12)
            assert exact_wasserstein(p, r, 2) <= d_pq + exact_wasserstein(q, r, 2) + 1e-9

    def test_size_mismatch_rejected(self):
        with pytest.raises(UnsupportedInstanceError):
            exact_wasserstein(np.zeros((3, 2)), np.zeros((4, 2)), 2)

    def test_oracle_scale_limit(self):
        big = np.zeros((65, 2))
        with pytest.raises(UnsupportedInstanceError):
            exact_wasserstein(big, big, 2)


class TestSlicedWasserstein:
    def test_identical_sets_exact_zero(self):
        p = np.random.default_rng(3).normal(size=(12, 4))
        for order in (1, 2):
            assert sliced_wasserstein(p, p, 64, order, rng=9) == 0.0

    def test_one_dimensional_reduction_is_exact(self):
        rng = np.random.default_rng(4)
        a = rng.integers(0, 20, size=(9, 1)).astype(float)
        b = rng.integers(0, 20, size=(5, 1)).astype(float)
        for n_proj in (1, 7, 64):
            assert sliced_wasserstein(a, b, n_proj, 2, rng=n_proj) == wasserstein_1d(
                a.ravel(), b.ravel(), 2
            )

    def test_one_dimensional_reduction_float_data(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=(6, 1)), rng.normal(size=(11, 1))
        s = sliced_wasserstein(a, b, 33, 2, rng=1)
        assert s == pytest.approx(wasserstein_1d(a.ravel(), b.ravel(), 2), rel=1e-12)

    def test_monotone_consistency_with_exact(self):
        # SWD never exceeds the exact distance (projections contract norms)
        # and is strictly positive for disjoint sets
        rng = np.random.default_rng(12)
        p = rng.normal(size=(8, 2))
        q = rng.normal(size=(8, 2)) + 3.0
        swd = sliced_wasserstein(p, q, 2000, 2, rng=0)
        exact = exact_wasserstein(p, q, 2)
        assert 0.0 < swd <= exact + 1e-9
        assert sliced_wasserstein(p, p, 2000, 2, rng=0) == 0.0

    def test_variance_decays_like_root_j(self):
        # sample std of the squared estimate across seeds ~ 1/sqrt(J)
        rng = np.random.default_rng(13)
        p = rng.normal(size=(16, 2))
        q = rng.normal(size=(16, 2)) + 1.0
        stds = {}
        for n_proj in (5, 20, 80, 320):
            vals = [
                sliced_wasserstein(p, q, n_proj, 2, rng=seed) ** 2 for seed in range(60)
            ]
            stds[n_proj] = np.std(vals)
        assert stds[20] < stds[5]
        assert stds[80] < stds[20]
        assert stds[320] < stds[80]
        assert stds[320] < 0.35 * stds[20]  # expected ratio 0.25

    def test_rigid_rotation_invariance(self):
        rng = np.random.default_rng(14)
        p = rng.normal(size=(32, 2))
        q = rng.normal(size=(32, 2)) + np.array([1.5, -0.5])
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        base = sliced_wasserstein(p, q, 4000, 2, rng=2)
        rotated = sliced_wasserstein(p @ rot.T, q @ rot.T, 4000, 2, rng=3)
        assert rotated == pytest.approx(base, rel=0.05)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 3)), 10, 2)

    def test_seeded_determinism(self):
        rng = np.random.default_rng(15)
        p, q = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        assert sliced_wasserstein(p, q, 50, 2, rng=7) == sliced_wasserstein(p, q, 50, 2, rng=7)

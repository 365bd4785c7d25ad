"""Counter-based stream discipline: addressability, independence, statistics."""

import numpy as np
import pytest
from scipy import stats

from mncalab.rng import (
    RngStream,
    sample_categorical,
    sample_categorical_field,
    sample_normal,
    sample_uniform,
)


class TestAddressing:
    def test_same_coordinates_same_draws(self):
        a = RngStream(7).at(3, 1, 4).normal((16, 16))
        b = RngStream(7).at(3, 1, 4).normal((16, 16))
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        a = RngStream(7).at(1).uniform((64,))
        b = RngStream(8).at(1).uniform((64,))
        assert not np.array_equal(a, b)

    def test_sibling_streams_differ(self):
        root = RngStream(0)
        a = root.at(0).uniform((64,))
        b = root.at(1).uniform((64,))
        assert not np.array_equal(a, b)

    def test_coordinate_paths_are_not_flattened(self):
        # (1,2) addressed in two hops equals one hop with both coordinates
        root = RngStream(11)
        assert np.array_equal(root.at(1).at(2).uniform((8,)), root.at(1, 2).uniform((8,)))
        # but (1,2) and (2,1) are different paths
        assert not np.array_equal(root.at(1, 2).uniform((8,)), root.at(2, 1).uniform((8,)))

    def test_evaluation_order_is_irrelevant(self):
        """Per-cell draws depend only on the cell's coordinates."""
        cells = [(y, x) for y in range(6) for x in range(6)]
        forward = {c: RngStream(5).at(9, *c).uniform() for c in cells}
        backward_order = {c: RngStream(5).at(9, *c).uniform() for c in reversed(cells)}
        assert forward == backward_order

    def test_field_draws_reproducible(self):
        s = RngStream(123).at(2, 7)
        assert np.array_equal(s.uniform((5, 5)), s.uniform((5, 5)))


class TestStatistics:
    def test_normal_moments(self):
        draws = RngStream(42).at(0).normal((100_000,))
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.05

    def test_uniform_support(self):
        draws = RngStream(42).at(1).uniform((100_000,))
        assert draws.min() >= 0.0 and draws.max() < 1.0
        assert abs(draws.mean() - 0.5) < 0.01

    def test_integers_inclusive_endpoints(self):
        draws = RngStream(3).at(0).integers(5, 15, (20_000,))
        assert draws.min() == 5 and draws.max() == 15

    def test_choice_no_replace_distinct(self):
        picks = RngStream(3).at(1).choice_no_replace(49, 15)
        assert len(set(picks.tolist())) == 15
        with pytest.raises(ValueError):
            RngStream(3).at(1).choice_no_replace(3, 4)


class TestCategorical:
    def test_degenerate_always_hits(self):
        rng = RngStream(0).at(0)
        for i in range(50):
            assert sample_categorical(rng.at(i), [0.0, 0.0, 1.0, 0.0]) == 2

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            sample_categorical(RngStream(0), [0.5, 0.6, -0.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            sample_categorical(RngStream(0), [0.5, 0.4])

    def test_tolerates_tiny_sum_drift(self):
        sample_categorical(RngStream(0), [0.5, 0.5 + 5e-7])

    def test_frequencies_chi_square(self):
        probs = np.array([0.2, 0.3, 0.5])
        rng = RngStream(77).at(4)
        n = 100_000
        draws = sample_categorical_field(rng, np.tile(probs[:, None], (1, n)))
        counts = np.bincount(draws, minlength=3)
        _, p = stats.chisquare(counts, probs * n)
        assert p > 0.01

    def test_field_degenerate_per_site(self):
        probs = np.zeros((3, 2, 2))
        probs[0, 0, :] = 1.0
        probs[2, 1, :] = 1.0
        idx = sample_categorical_field(RngStream(1).at(0), probs)
        assert np.array_equal(idx, [[0, 0], [2, 2]])

    def test_field_matches_scalar_contract(self):
        probs = np.array([0.1, 0.2, 0.7])
        idx = sample_categorical_field(RngStream(9).at(0), np.tile(probs[:, None], (1, 10_000)))
        freq = np.bincount(idx, minlength=3) / 10_000
        assert np.all(np.abs(freq - probs) < 0.02)

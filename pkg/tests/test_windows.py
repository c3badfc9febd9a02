"""Tests for calibration windows and empirical-quantile queries.

Key properties:
1. FIFO eviction matches a reference deque model over long random runs.
2. Quantile queries agree exactly with a sort-based oracle at every level.
3. Out-of-range levels follow the inflated / empty rules.
"""

import math
from collections import deque

import numpy as np
import pytest

from contina.errors import EmptyCalibrationError
from contina.windows import CalibrationWindow, QuantileResult, quantile_rank


def oracle_quantile(scores, level):
    """Independent sort-based oracle for the m-th smallest selection rule."""
    s = sorted(scores)
    n = len(s)
    m = min(max(math.ceil(level * n - 1e-9), 1), n)
    return s[m - 1]


class TestPush:
    def test_fifo_eviction_at_capacity(self):
        w = CalibrationWindow(3, [1, 2, 3])
        w.push(4)
        assert w.scores == (2.0, 3.0, 4.0)

    def test_append_under_capacity(self):
        w = CalibrationWindow(2)
        w.push(5)
        assert w.scores == (5.0,)

    def test_capacity_one_replacement(self):
        w = CalibrationWindow(1, [7])
        w.push(9)
        assert w.scores == (9.0,)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
    def test_rejects_non_finite(self, bad):
        w = CalibrationWindow(2)
        with pytest.raises(ValueError, match="finite"):
            w.push(bad)
        assert len(w) == 0

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            CalibrationWindow(0)

    def test_matches_reference_fifo_model(self):
        """Multiset equality with a plain deque across 10^4 random pushes."""
        rng = np.random.default_rng(7)
        for cap in (1, 3, 17, 100):
            w = CalibrationWindow(cap)
            model = deque(maxlen=cap)
            for x in rng.normal(size=10_000 // 4):
                w.push(x)
                model.append(float(x))
                assert sorted(w.scores) == sorted(model)
                assert w.scores == tuple(model)


class TestQuantile:
    def test_ninth_of_ten(self):
        w = CalibrationWindow(10, range(1, 11))
        expected = oracle_quantile(range(1, 11), 0.9)
        assert expected == 9
        assert w.quantile(0.9) == expected

    def test_singleton(self):
        assert CalibrationWindow(1, [5]).quantile(0.5) == 5

    def test_level_one_is_max(self):
        assert CalibrationWindow(3, [3, 1, 2]).quantile(1.0) == 3

    def test_empty_window_raises(self):
        with pytest.raises(EmptyCalibrationError):
            CalibrationWindow(3).quantile(0.5)

    def test_out_of_range_level_raises(self):
        w = CalibrationWindow(3, [1, 2, 3])
        with pytest.raises(ValueError, match="quantile_with_rules"):
            w.quantile(1.2)

    def test_oracle_equivalence_random_windows(self):
        """Exact agreement with the sorted-copy oracle, sizes 1..200."""
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = int(rng.integers(1, 201))
            scores = rng.normal(size=n) * rng.uniform(0.1, 50)
            level = float(rng.uniform(0, 1))
            w = CalibrationWindow(n, scores)
            assert w.quantile(level) == oracle_quantile(scores, level)

    def test_monotone_in_level(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            scores = rng.normal(size=int(rng.integers(1, 60)))
            w = CalibrationWindow(len(scores), scores)
            l1, l2 = sorted(rng.uniform(0, 1, size=2))
            assert w.quantile(l1) <= w.quantile(l2)

    def test_integer_boundary_ranks(self):
        # level * n landing exactly on an integer must not round up a rank
        w = CalibrationWindow(20, range(1, 21))
        assert w.quantile(0.85) == 17
        assert quantile_rank(0.85, 20) == 17


class TestQuantileWithRules:
    def test_inflated_above_one(self):
        w = CalibrationWindow(3, [1, 4, 2])
        res = w.quantile_with_rules(1.05)
        assert res == QuantileResult.inflated(8.0)
        assert res.widening == 8.0

    def test_empty_below_zero(self):
        res = CalibrationWindow(3, [1, 4, 2]).quantile_with_rules(-0.02)
        assert res.is_empty
        with pytest.raises(EmptyCalibrationError):
            res.widening

    def test_in_range_value(self):
        w = CalibrationWindow(3, [1, 4, 2])
        expected = oracle_quantile([1, 4, 2], 0.5)
        assert expected == 2
        assert w.quantile_with_rules(0.5) == QuantileResult.of_value(expected)

    def test_empty_window_raises(self):
        with pytest.raises(EmptyCalibrationError):
            CalibrationWindow(3).quantile_with_rules(0.5)

    def test_inflated_is_exactly_twice_max(self):
        # holds also for negative maxima, where domination cannot
        w = CalibrationWindow(3, [-4.0, -2.0, -1.0])
        assert w.quantile_with_rules(1.5).value == -2.0

    def test_inflated_dominates_window_with_nonnegative_max(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            scores = rng.normal(size=int(rng.integers(1, 40)))
            scores[int(rng.integers(len(scores)))] = abs(scores).max() + 1.0
            w = CalibrationWindow(len(scores), scores)
            delta = float(rng.uniform(1e-9, 3.0))
            inflated = w.quantile_with_rules(1.0 + delta).widening
            assert all(inflated >= s for s in w.scores)


class TestEvictionAndQueries:
    def test_sliding_queries_track_live_content(self):
        """After many pushes past capacity, queries see only live scores."""
        rng = np.random.default_rng(23)
        w = CalibrationWindow(50)
        model = deque(maxlen=50)
        for x in rng.uniform(-5, 5, size=2000):
            w.push(x)
            model.append(float(x))
        for level in (0.0, 0.1, 0.5, 0.9, 1.0):
            assert w.quantile(level) == oracle_quantile(model, level)
        assert w.max_score == max(model)

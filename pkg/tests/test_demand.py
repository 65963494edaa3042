"""Demand generator tests: moments, determinism, scripted replay.

The low-demand mean band was frozen from the rounded-truncated-normal
oracle: with mean 2 and std 1, E[round(max(X, 0))] = 2.00645 (truncation
shifts the mean slightly upward).
"""

import math

import numpy as np
import pytest

from symchain.demand import (
    HighPoisson,
    LowNormal,
    Scripted,
    ScriptExhausted,
    demand_model,
    make_rng,
    sample,
    spawn_rngs,
)

N_DRAWS = 100_000
LOW_MEAN_ORACLE = 2.00645  # sum_k k * (Phi(k+0.5-2) - Phi(k-0.5-2)), frozen


def draw(model, seed, n):
    rng = make_rng(seed)
    return np.array([sample(model, rng) for _ in range(n)])


def rounded_truncated_normal_mean(mu, sigma, upper=80):
    phi = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    return sum(
        k * (phi((k + 0.5 - mu) / sigma) - phi((k - 0.5 - mu) / sigma))
        for k in range(1, upper)
    )


class TestHighPoisson:
    def test_mean_close_to_rate(self):
        values = draw(HighPoisson(10.0), seed=1, n=N_DRAWS)
        assert 9.9 <= values.mean() <= 10.1

    def test_variance_close_to_mean(self):
        values = draw(HighPoisson(10.0), seed=2, n=N_DRAWS)
        assert abs(values.var(ddof=1) - 10.0) <= 0.03 * 10.0

    def test_draws_are_nonnegative_integers(self):
        values = draw(HighPoisson(10.0), seed=3, n=2000)
        assert np.all(values >= 0)
        assert np.all(values == np.round(values))

    def test_invalid_mean(self):
        with pytest.raises(ValueError):
            HighPoisson(0.0)


class TestLowNormal:
    def test_all_nonnegative_integers(self):
        values = draw(LowNormal(2.0, 1.0), seed=4, n=20_000)
        assert np.all(values >= 0)
        assert np.all(values == np.round(values))

    def test_mean_matches_truncation_oracle(self):
        oracle = rounded_truncated_normal_mean(2.0, 1.0)
        assert oracle == pytest.approx(LOW_MEAN_ORACLE, abs=1e-4)
        values = draw(LowNormal(2.0, 1.0), seed=5, n=N_DRAWS)
        assert values.mean() == pytest.approx(oracle, abs=0.02)
        assert 1.9 <= values.mean() <= 2.2

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            LowNormal(-2.0, 1.0)
        with pytest.raises(ValueError):
            LowNormal(2.0, 0.0)


class TestScripted:
    def test_replays_in_order_then_raises(self):
        model = Scripted([3, 7])
        rng = make_rng(0)
        assert sample(model, rng) == 3.0
        assert sample(model, rng) == 7.0
        with pytest.raises(ScriptExhausted):
            sample(model, rng)

    def test_rejects_negative_values(self):
        with pytest.raises(ValueError):
            Scripted([1, -2])


class TestDeterminism:
    def test_same_seed_same_stream(self):
        for model in (HighPoisson(10.0), LowNormal(2.0, 1.0)):
            a = draw(model, seed=42, n=500)
            b = draw(model, seed=42, n=500)
            assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = draw(HighPoisson(10.0), seed=1, n=200)
        b = draw(HighPoisson(10.0), seed=2, n=200)
        assert not np.array_equal(a, b)

    def test_spawned_streams_are_independent_and_reproducible(self):
        first = [g.integers(0, 1 << 30) for g in spawn_rngs(9, 3)]
        second = [g.integers(0, 1 << 30) for g in spawn_rngs(9, 3)]
        assert first == second
        assert len(set(first)) == 3


class TestRegistry:
    def test_named_regimes(self):
        assert demand_model("high") == HighPoisson(10.0)
        assert demand_model("low") == LowNormal(2.0, 1.0)
        with pytest.raises(ValueError):
            demand_model("medium")

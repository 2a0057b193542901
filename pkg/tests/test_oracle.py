import itertools
import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import binom

from app.adapters.predictor import TabularPredictor
from app.core.diffusion import RemaskStrategy
from app.core.errors import OracleRefusal
from app.engine.oracle import (
    enumerate_forward,
    enumerate_reverse,
    exact_bound,
    pattern_weight,
    total_variation,
)
from app.harness.oracle_check import response_example


class TestEnumerateForward:

    @pytest.mark.parametrize("n, t", [(1, 0.5), (4, 0.25), (6, 0.9)])
    def test_law(self, n, t):
        dist = enumerate_forward(n, t)
        assert abs(dist.probs.sum() - 1.0) <= 1e-12
        for i in range(n):
            assert dist.marginal(i) == pytest.approx(t)
        np.testing.assert_allclose(dist.mask_count_distribution(), binom.pmf(np.arange(n + 1), n, t))

    def test_extremes(self):
        assert enumerate_forward(3, 0.0).probability([]) == 1.0
        assert enumerate_forward(3, 1.0).probability([0, 1, 2]) == 1.0

    def test_size_guard(self):
        with pytest.raises(OracleRefusal):
            enumerate_forward(21, 0.5)


class TestPatternWeight:

    @pytest.mark.parametrize("m, n", [(1, 1), (1, 4), (2, 4), (4, 4), (3, 6)])
    def test_closed_form(self, m, n):
        expected = math.factorial(m - 1) * math.factorial(n - m) / math.factorial(n)
        assert pattern_weight(m, n) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("m, n", [(1, 3), (2, 5)])
    def test_truncated_integral(self, m, n):
        eps = 0.05
        integral, _ = quad(lambda t: t ** (m - 1) * (1 - t) ** (n - m), eps, 1.0)
        assert pattern_weight(m, n, eps) == pytest.approx(integral / (1 - eps), rel=1e-9)


class TestExactBound:

    def test_single_token(self):
        p = 0.3
        predictor = TabularPredictor({(0,): p, (1,): 1 - p}, 2)
        assert abs(exact_bound(response_example([0]), predictor) + math.log(p)) <= 1e-12

    def test_uniform_predictor(self):
        for n in (1, 3, 5):
            bound = exact_bound(response_example([0] * n, split=n // 2), TabularPredictor.uniform(n, 2))
            assert bound == pytest.approx(n * math.log(2), rel=1e-12)

    def test_uniform_predictor_has_no_epsilon_bias(self):
        predictor = TabularPredictor.uniform(4, 2)
        example = response_example([1, 0, 1, 1])
        assert exact_bound(example, predictor, 1e-3) == pytest.approx(exact_bound(example, predictor), abs=1e-12)

    def test_exact_conditionals_give_the_likelihood(self, rng):
        # averaging over reveal orders, exact conditionals telescope to -log p(x)
        for _ in range(10):
            n = int(rng.integers(1, 5))
            predictor = TabularPredictor.random(n, 2, rng)
            truth = tuple(int(v) for v in rng.integers(2, size=n))
            nll = -math.log(dict(zip(map(tuple, predictor.sequences.tolist()), predictor.probs))[truth])
            assert exact_bound(response_example(truth), predictor) == pytest.approx(nll, rel=1e-9)

    def test_halving_epsilon_halves_the_bias(self, rng):
        predictor = TabularPredictor.random(4, 2, rng)
        example = response_example([0, 1, 1, 0], split=2)
        full = exact_bound(example, predictor)
        bias = abs(exact_bound(example, predictor, 1e-3) - full)
        halved = abs(exact_bound(example, predictor, 5e-4) - full)
        assert halved <= 0.6 * bias + 1e-12

    def test_size_guard(self):
        with pytest.raises(OracleRefusal):
            exact_bound(response_example([0] * 13), TabularPredictor.point_mass([0] * 13, 2))


class TestEnumerateReverse:

    def test_point_mass(self):
        out = enumerate_reverse(TabularPredictor.point_mass((1, 0, 1), 2), 3, 3)
        assert out[(1, 0, 1)] == pytest.approx(1.0)
        assert len(out) == 8

    def test_one_token_per_step_recovers_the_joint(self, rng):
        predictor = TabularPredictor.random(3, 2, rng)
        joint = dict(zip(map(tuple, predictor.sequences.tolist()), predictor.probs))
        out = enumerate_reverse(predictor, 3, 3, RemaskStrategy.RANDOM, temperature=1.0)
        for seq in itertools.product(range(2), repeat=3):
            assert out[seq] == pytest.approx(joint.get(seq, 0.0), abs=1e-12)

    def test_single_step_is_the_product_of_marginals(self, pair_predictor):
        out = enumerate_reverse(pair_predictor, 2, 1)
        for seq in itertools.product(range(2), repeat=2):
            assert out[seq] == pytest.approx(0.25)

    def test_zero_temperature_is_deterministic(self, rng):
        out = enumerate_reverse(TabularPredictor.random(2, 3, rng), 2, 2, RemaskStrategy.LOW_CONFIDENCE, 0.0)
        assert sorted(out.values())[-1] == pytest.approx(1.0)

    def test_size_guard(self):
        with pytest.raises(OracleRefusal):
            enumerate_reverse(TabularPredictor.uniform(4, 2), 4, 2)


def test_total_variation():
    assert total_variation({"a": 0.5, "b": 0.5}, {"a": 1.0}) == pytest.approx(0.5)
    assert total_variation({"a": 1.0}, {"a": 1.0}) == 0.0

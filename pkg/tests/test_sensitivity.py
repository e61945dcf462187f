import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import DeterministicOperatorError, InvalidParameterError, StochasticOperatorError
from core.model import ApproxOperator, Hypothesis, SyntheticTask, UnlabelledSample
from core.sensitivity import (analytic_sensitivity_upper, empirical_sensitivity, expected_sensitivity,
                              fast_rate_deviation_bound, pointwise_sensitivity, sensitivity_deviation_bound,
                              true_sensitivity_mc, uniform_sensitivity_constant, unlabelled_epsilon_u,
                              variance_condition_check)

QUANTIZER = ApproxOperator.uniform_quantizer(0.5, 1.0)


def test_empirical_sensitivity_example():
    s = UnlabelledSample([[1.0], [-2.0]])
    estimate = empirical_sensitivity(Hypothesis.linear([0.6]), QUANTIZER, s, p=1.0)
    assert estimate.value == pytest.approx(0.15)
    assert estimate.kind == "empirical"
    assert estimate.certified


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=2, max_size=2),
       st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_empirical_sensitivity_is_monotone_in_p(weights, seed):
    X = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(25, 2))
    s = UnlabelledSample(X)
    h = Hypothesis.linear(weights)
    d1, d2, d4 = (empirical_sensitivity(h, QUANTIZER, s, p).value for p in (1.0, 2.0, 4.0))
    assert d1 <= d2 + 1e-12
    assert d2 <= d4 + 1e-12


def test_empirical_sensitivity_rejects_stochastic_operator():
    s = UnlabelledSample([[1.0]])
    with pytest.raises(StochasticOperatorError) as info:
        empirical_sensitivity(Hypothesis.linear([0.3]), ApproxOperator.stochastic_rounder(1.0), s)
    assert "expected_sensitivity" in info.value.message


def test_expected_sensitivity_rejects_deterministic_operator():
    with pytest.raises(DeterministicOperatorError):
        expected_sensitivity(Hypothesis.linear([0.3]), QUANTIZER, UnlabelledSample([[1.0]]), 1.0, 10, seed=0)


def test_p_below_one_is_rejected():
    with pytest.raises(InvalidParameterError):
        empirical_sensitivity(Hypothesis.linear([0.3]), QUANTIZER, UnlabelledSample([[1.0]]), p=0.5)


def test_analytic_upper_example():
    op = ApproxOperator.magnitude_pruner(0)
    estimate = analytic_sensitivity_upper(Hypothesis.linear([0.3, 0.4]), op, 2.0)
    assert estimate.value == pytest.approx(1.0)
    assert estimate.certified


def test_analytic_upper_dominates_empirical():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1.0, 1.0, size=(50, 3))
    budget = float(np.max(np.linalg.norm(X, axis=1)))
    s = UnlabelledSample(X)
    for w in rng.uniform(-1.0, 1.0, size=(20, 3)):
        h = Hypothesis.linear(w)
        assert empirical_sensitivity(h, QUANTIZER, s).value <= analytic_sensitivity_upper(h, QUANTIZER, budget).value + 1e-12


def test_true_sensitivity_is_zero_on_the_quantization_lattice():
    task = SyntheticTask(Hypothesis.linear([0.0, 0.0]))
    estimate = true_sensitivity_mc(Hypothesis.linear([0.5, -1.0]), QUANTIZER, task, 1.0, 1000, seed=2)
    assert estimate.value == 0.0
    assert estimate.kind == "monte_carlo_true"
    assert not estimate.certified


def test_true_sensitivity_matches_closed_form():
    # D^1 of w=0.6 under step 0.5 on uniform [-1, 1] is 0.1 * E|x| = 0.05
    task = SyntheticTask(Hypothesis.linear([0.0]))
    estimate = true_sensitivity_mc(Hypothesis.linear([0.6]), QUANTIZER, task, 1.0, 200000, seed=9)
    assert abs(estimate.value - 0.05) <= 5 * estimate.std_error


def test_true_sensitivity_second_moment_closed_form():
    # (0.1^2 E x^2)^{1/2} = 0.1 / sqrt(3) for x uniform on [0, 1]
    task = SyntheticTask(Hypothesis.linear([0.0]), box_low=0.0, box_high=1.0)
    estimate = true_sensitivity_mc(Hypothesis.linear([0.6]), QUANTIZER, task, 2.0, 200000, seed=9)
    assert estimate.std_error > 0
    assert abs(estimate.value - 0.1 * math.sqrt(1.0 / 3.0)) <= 3 * estimate.std_error


def test_expected_sensitivity_of_two_outcome_rounding():
    # w = 0.3 rounds to 0 w.p. 0.7 and to 1 w.p. 0.3: 0.7 * 0.3 + 0.3 * 0.7
    op = ApproxOperator.stochastic_rounder(1.0)
    estimate = expected_sensitivity(Hypothesis.linear([0.3]), op, UnlabelledSample([[1.0]]), 1.0, 20000, seed=6)
    assert estimate.kind == "expected_stochastic"
    assert abs(estimate.value - 0.42) <= 3 * estimate.std_error


def test_variance_condition_of_two_outcome_rounding():
    # 0.7 * 0.3^2 + 0.3 * 0.7^2
    op = ApproxOperator.stochastic_rounder(1.0)
    rows = variance_condition_check(op, [Hypothesis.linear([0.3])], UnlabelledSample([[1.0]]), alpha=1.0,
                                    n_omega=20000, seed=6)
    assert rows[0].std_error > 0
    assert abs(rows[0].lhs - 0.21) <= 3 * rows[0].std_error
    assert rows[0].holds


def test_sensitivity_deviation_bound_components():
    bound = sensitivity_deviation_bound(0.1, 1.0, 100, 0.1)
    assert dict(bound.components)["rademacher_term"] == pytest.approx(0.2)
    assert dict(bound.components)["confidence_term"] == pytest.approx(3.0 * math.sqrt(math.log(20.0) / 200.0))
    assert bound.epsilon_u == pytest.approx(sum(v for _, v in bound.components))


def test_unlabelled_epsilon_u_uses_half_delta():
    direct = sensitivity_deviation_bound(0.05, 2.0, 80, 0.025)
    halved = unlabelled_epsilon_u(0.05, 2.0, 80, 0.05)
    assert halved.epsilon_u == direct.epsilon_u
    assert halved.delta == 0.05


def test_fast_rate_bound_components():
    bound = fast_rate_deviation_bound(0.01, 0.1, 0.5, 100, 0.1)
    expected = 0.06 + 0.1 * math.sqrt(2.0 * math.log(10.0) / 100.0) + 3.0 * math.log(10.0) / 100.0
    assert bound.epsilon_u == pytest.approx(expected)
    assert [label for label, _ in bound.components] == ["rademacher_term", "confidence_term", "fast_rate_term"]


def test_deviation_bound_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        sensitivity_deviation_bound(0.1, 0.0, 100, 0.1)
    with pytest.raises(InvalidParameterError):
        sensitivity_deviation_bound(0.1, 1.0, 100, 1.5)


def test_expected_sensitivity_is_seeded_and_thread_independent():
    op = ApproxOperator.stochastic_rounder(1.0)
    s = UnlabelledSample(np.random.default_rng(1).uniform(-1.0, 1.0, size=(30, 2)))
    h = Hypothesis.linear([0.3, -0.7])
    serial = expected_sensitivity(h, op, s, 1.0, 200, seed=5)
    parallel = expected_sensitivity(h, op, s, 1.0, 200, seed=5, threads=4)
    assert serial.value == parallel.value
    assert serial.n == 200 and serial.std_error > 0


def test_variance_condition_deterministic_operator_is_a_singleton():
    s = UnlabelledSample([[1.0], [-2.0]])
    h = Hypothesis.linear([0.6])
    rows = variance_condition_check(QUANTIZER, [h], s, alpha=1.0)
    expected = float(np.mean(np.square(pointwise_sensitivity(h, QUANTIZER, s.inputs))))
    assert rows[0].lhs == expected
    assert rows[0].std_error == 0.0
    assert rows[0].holds


def test_variance_condition_weight_norm_capacity():
    op = ApproxOperator.stochastic_rounder(1.0)
    s = UnlabelledSample([[1.0]])
    rows = variance_condition_check(op, [Hypothesis.linear([0.3])], s, alpha=0.01, capacity_fn="weight_norm",
                                    n_omega=100, seed=1)
    assert rows[0].capacity == pytest.approx(0.3)
    assert rows[0].threshold == pytest.approx((0.01 * 0.3) ** 2)
    assert not rows[0].holds


def test_uniform_sensitivity_constant():
    assert uniform_sensitivity_constant([[0.6]], QUANTIZER, [[2.0], [-1.0]]) == pytest.approx(0.2)

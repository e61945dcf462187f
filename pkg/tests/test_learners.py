import numpy as np
import pytest

from core.errors import InfeasibleError, InvalidParameterError
from core.model import (ApproxOperator, FeatureMap, Hypothesis, LabelledSample, LossSpec, SyntheticTask,
                        UnlabelledSample, empirical_error, generate)
from core.sensitivity import empirical_sensitivity
from services.learners import (SearchDomain, SensitivityFunction, ThresholdSchedule, analytic_lambda_erm,
                               approx_error, constrained_erm, lambda_erm, lambda_grid_srm, select_minimizer,
                               sensitivity_regularized_erm, srm_learner)

QUANTIZER = ApproxOperator.uniform_quantizer(0.5, 1.0)
LOSS = LossSpec()


@pytest.fixture
def samples():
    task = SyntheticTask(Hypothesis.linear([0.7, -0.4]), label_noise_sd=0.1, seed=11)
    return generate(task, 30), generate(task, 40, labelled=False)


@pytest.fixture
def domain():
    return SearchDomain(2, points_per_axis=11)


def test_search_domain_grid_size_and_validation():
    assert SearchDomain(2, points_per_axis=11).grid_points().shape == (121, 2)
    with pytest.raises(InvalidParameterError):
        SearchDomain(7, points_per_axis=11)
    with pytest.raises(InvalidParameterError):
        SearchDomain(2, mode="annealing")
    assert SearchDomain.default(4).mode == "coordinate_descent"
    assert SearchDomain.default(2).mode == "grid"


def test_threshold_schedule_defaults_and_validation():
    schedule = ThresholdSchedule((0.1, 0.2))
    assert schedule.weights == (0.5, 0.25)
    with pytest.raises(InvalidParameterError):
        ThresholdSchedule((0.2, 0.1))
    with pytest.raises(InvalidParameterError):
        ThresholdSchedule((0.1, 0.2), (0.6, 0.6))


def test_select_minimizer_breaks_ties_by_lowest_index():
    values = np.array([0.3, 0.1, 0.1, 0.05])
    assert select_minimizer(values, np.array([True, True, True, False])) == 1
    with pytest.raises(InfeasibleError):
        select_minimizer(values, np.zeros(4, dtype=bool))


def test_constrained_erm_reports_minimum_sensitivity_when_infeasible(samples):
    labelled, unlabelled = samples
    pruner = ApproxOperator.magnitude_pruner(0)
    domain = SearchDomain(2, points_per_axis=10)
    with pytest.raises(InfeasibleError) as info:
        constrained_erm(labelled, unlabelled, pruner, 1e-6, 1.0, LOSS, domain)
    assert info.value.min_sensitivity > 1e-6


def test_constrained_erm_strict_and_closed_threshold(samples):
    labelled, unlabelled = samples
    pruner = ApproxOperator.magnitude_pruner(0)
    domain = SearchDomain(1, points_per_axis=10)
    X = labelled.inputs[:, :1]
    labelled_1d = LabelledSample(X, labelled.targets)
    unlabelled_1d = UnlabelledSample(unlabelled.inputs[:, :1])
    t = min(empirical_sensitivity(Hypothesis.linear(w), pruner, unlabelled_1d).value for w in domain.grid_points())
    with pytest.raises(InfeasibleError):
        constrained_erm(labelled_1d, unlabelled_1d, pruner, t, 1.0, LOSS, domain)
    out = constrained_erm(labelled_1d, unlabelled_1d, pruner, t, 1.0, LOSS, domain, strict=False)
    assert empirical_sensitivity(out.hypothesis, pruner, unlabelled_1d).value <= t


def test_constrained_erm_respects_threshold(samples, domain):
    labelled, unlabelled = samples
    out = constrained_erm(labelled, unlabelled, QUANTIZER, 0.05, 1.0, LOSS, domain)
    assert empirical_sensitivity(out.hypothesis, QUANTIZER, unlabelled).value < 0.05
    assert out.objective_value == approx_error(QUANTIZER, out.hypothesis, labelled, LOSS)
    assert out.chosen_t == 0.05


def test_lambda_zero_is_erm_on_the_approximated_class(samples, domain):
    labelled, unlabelled = samples
    out = lambda_erm(labelled, unlabelled, QUANTIZER, 0.0, 1.0, LOSS, domain)
    errors = [approx_error(QUANTIZER, Hypothesis.linear(w), labelled, LOSS) for w in domain.grid_points()]
    assert out.objective_value == min(errors)
    assert np.array_equal(out.hypothesis.weights, domain.grid_points()[int(np.argmin(errors))])
    assert out.objective_trace[-1] == out.objective_value


def test_lambda_erm_is_thread_independent(samples, domain):
    labelled, unlabelled = samples
    serial = lambda_erm(labelled, unlabelled, QUANTIZER, 1.0, 1.0, LOSS, domain)
    parallel = lambda_erm(labelled, unlabelled, QUANTIZER, 1.0, 1.0, LOSS, domain, threads=4)
    assert np.array_equal(serial.hypothesis.weights, parallel.hypothesis.weights)
    assert serial.objective_value == parallel.objective_value


def test_lambda_erm_rejects_negative_lambda(samples, domain):
    labelled, unlabelled = samples
    with pytest.raises(InvalidParameterError):
        lambda_erm(labelled, unlabelled, QUANTIZER, -1.0, 1.0, LOSS, domain)


def test_coordinate_descent_returns_consistent_objective(samples):
    labelled, unlabelled = samples
    domain = SearchDomain(2, mode="coordinate_descent", points_per_axis=11, restarts=3, seed=5)
    first = lambda_erm(labelled, unlabelled, QUANTIZER, 0.5, 1.0, LOSS, domain)
    second = lambda_erm(labelled, unlabelled, QUANTIZER, 0.5, 1.0, LOSS, domain)
    expected = (approx_error(QUANTIZER, first.hypothesis, labelled, LOSS)
                + 0.5 * empirical_sensitivity(first.hypothesis, QUANTIZER, unlabelled).value)
    assert first.objective_value == expected
    assert np.array_equal(first.hypothesis.weights, second.hypothesis.weights)


def test_single_threshold_srm_is_erm_on_the_original_class(samples, domain):
    labelled, unlabelled = samples
    out = srm_learner(labelled, unlabelled, QUANTIZER, ThresholdSchedule((10.0,), (1.0,)), 0.0,
                      lambda level: 0.0,
                      LOSS, domain)
    errors = [empirical_error(Hypothesis.linear(w), labelled, LOSS) for w in domain.grid_points()]
    assert np.array_equal(out.hypothesis.weights, domain.grid_points()[int(np.argmin(errors))])
    assert out.chosen_k == 1
    assert not out.metadata["clamped"]


def test_srm_with_default_estimator(samples, domain):
    labelled, unlabelled = samples
    out = srm_learner(labelled, unlabelled, QUANTIZER, ThresholdSchedule((0.02, 0.1)), 0.01, None, LOSS, domain,
                      n_sigma=200)
    assert out.chosen_k in (1, 2)
    assert len(out.metadata["penalties"]) == 2


def test_sensitivity_regularized_erm_with_analytic_upper(samples, domain):
    labelled, _ = samples
    fn = SensitivityFunction.analytic_upper(QUANTIZER, 1.5)
    out = sensitivity_regularized_erm(labelled, QUANTIZER, fn, LOSS, domain)
    assert out.sensitivity_variant == "analytic_upper"
    assert out.objective_value == approx_error(QUANTIZER, out.hypothesis, labelled, LOSS) + fn(out.hypothesis)


def test_analytic_lambda_erm_matches_regularized_erm(samples, domain):
    labelled, _ = samples
    fn = SensitivityFunction.analytic_upper(QUANTIZER, 1.5)
    analytic = analytic_lambda_erm(labelled, QUANTIZER, 2.0, fn, LOSS, domain)
    regularized = sensitivity_regularized_erm(labelled, QUANTIZER, fn, LOSS, domain, rho=2.0)
    assert np.array_equal(analytic.hypothesis.weights, regularized.hypothesis.weights)


def test_lambda_grid_srm_rows(samples, domain):
    labelled, unlabelled = samples
    out, rows = lambda_grid_srm(labelled, unlabelled, QUANTIZER, [0.0, 1.0, 4.0], None, 1.0, LOSS, domain)
    assert [row["k"] for row in rows] == [1, 2, 3]
    assert [row["w_k"] for row in rows] == [0.5, 0.25, 0.125]
    best = min(rows, key=lambda row: row["score"])
    assert out.algorithm == "lambda_grid_srm"
    assert out.metadata["score"] == best["score"]
    assert out.chosen_k == best["k"]


def test_unknown_sensitivity_variant():
    with pytest.raises(InvalidParameterError):
        SensitivityFunction("guess", lambda h: None)


def test_feature_map_must_match_domain(samples):
    labelled, unlabelled = samples
    with pytest.raises(InvalidParameterError):
        lambda_erm(labelled, unlabelled, QUANTIZER, 1.0, 1.0, LOSS, SearchDomain(3, points_per_axis=5),
                   feature_map=FeatureMap.identity(2))

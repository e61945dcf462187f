import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import DimensionMismatchError, IngestionError, InvalidParameterError
from core.model import (CLIP_MARGIN, ApproxOperator, FeatureMap, Hypothesis, LabelledSample, LossSpec,
                        SyntheticTask, UnlabelledSample, apply_operator, empirical_error, generate, loss_value,
                        predict, predict_batch, read_sample_csv, summarize_draws, true_error_mc, write_sample_csv)


def test_predict_identity_dot_product():
    assert predict(Hypothesis.linear([1.0, 2.0]), [3.0, 4.0]) == 11.0


def test_predict_rejects_wrong_dimension():
    with pytest.raises(DimensionMismatchError):
        predict(Hypothesis.linear([1.0, 2.0]), [3.0])


def test_predict_batch_matches_predict():
    h = Hypothesis.linear([0.5, -1.5])
    X = np.array([[1.0, 2.0], [-3.0, 0.25]])
    assert predict_batch(h, X).tolist() == [predict(h, x) for x in X]


def test_polynomial_feature_dimension():
    fm = FeatureMap.polynomial(2, 2)
    assert fm.dim == 6
    assert fm.transform(np.array([[2.0, 3.0]])).tolist() == [[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]]


def test_rbf_gram_diagonal_at_center():
    fm = FeatureMap.rbf([[0.0, 0.0]], width=1.0)
    assert fm.gram_diagonal(np.array([[0.0, 0.0]]))[0] == pytest.approx(1.0)


def test_hypothesis_weights_must_match_feature_dimension():
    with pytest.raises(DimensionMismatchError):
        Hypothesis(np.ones(3), FeatureMap.polynomial(2, 2))


def test_hypothesis_weights_are_read_only():
    h = Hypothesis.linear([1.0, 2.0])
    with pytest.raises(ValueError):
        h.weights[0] = 5.0


@pytest.mark.parametrize("prediction,target,expected", [
    (0.3, 0.3, 0.0),
    (0.4, 0.1, 0.3),
    (5.0, 0.0, 1.0 - CLIP_MARGIN),
])
def test_clipped_absolute_loss(prediction, target, expected):
    assert loss_value(LossSpec(), prediction, target) == pytest.approx(expected, abs=1e-15)


def test_hinge_and_squared_losses():
    assert loss_value(LossSpec("clipped_hinge"), 0.25, 1.0) == pytest.approx(0.75)
    assert loss_value(LossSpec("clipped_hinge"), 2.0, -1.0) == 1.0 - CLIP_MARGIN
    assert loss_value(LossSpec("clipped_squared"), 1.0, 0.0) == pytest.approx(0.25)


finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


@settings(max_examples=500, deadline=None)
@given(st.sampled_from(["clipped_absolute", "clipped_hinge", "clipped_squared"]),
       st.sampled_from([0.5, 1.0, 2.0]), finite, finite, finite)
def test_losses_are_bounded_and_lipschitz(kind, rho, a, b, y):
    spec = LossSpec(kind, rho)
    la, lb = loss_value(spec, a, y), loss_value(spec, b, y)
    assert 0.0 <= la < spec.bound
    assert 0.0 <= lb < spec.bound
    assert abs(la - lb) <= rho * abs(a - b) + 1e-12


def test_loss_rejects_nonpositive_rho():
    with pytest.raises(InvalidParameterError):
        LossSpec(rho=0.0)


def test_empirical_error_single_point():
    s = LabelledSample([[1.0]], [0.0])
    assert empirical_error(Hypothesis.linear([0.5]), s, LossSpec()) == 0.5


def test_quantizer_rounds_to_grid():
    op = ApproxOperator.uniform_quantizer(0.5, 1.0)
    assert op.transform_weights([0.6, -0.3, 2.0, -7.0]).tolist() == [0.5, -0.5, 1.0, -1.0]


def test_quantizer_needs_clamp():
    with pytest.raises(InvalidParameterError):
        ApproxOperator("uniform_quantizer", step=0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1.0, max_value=1.0), st.sampled_from([0.05, 0.1, 0.25, 0.5]))
def test_quantizer_is_idempotent_and_contracts(w, step):
    op = ApproxOperator.uniform_quantizer(step, 1.0)
    q = op.transform_weights(np.array([w]))
    assert np.array_equal(op.transform_weights(q), q)
    assert abs(q[0] - w) <= step / 2.0 + 1e-12


def test_pruner_keeps_largest_magnitudes():
    op = ApproxOperator.magnitude_pruner(1)
    assert op.transform_weights([0.1, -0.5, 0.3]).tolist() == [0.0, -0.5, 0.0]


def test_pruner_breaks_ties_by_lowest_index():
    op = ApproxOperator.magnitude_pruner(1)
    assert op.transform_weights([0.5, -0.5]).tolist() == [0.5, 0.0]


def test_pruner_keep_exceeding_dimension():
    with pytest.raises(InvalidParameterError):
        ApproxOperator.magnitude_pruner(3).transform_weights([1.0, 2.0])


def test_stochastic_operator_needs_seed():
    op = ApproxOperator.stochastic_rounder(1.0)
    h = Hypothesis.linear([0.3])
    with pytest.raises(InvalidParameterError):
        apply_operator(op, h)
    first = apply_operator(op, h, noise_seed=11).weights
    second = apply_operator(op, h, noise_seed=11).weights
    assert np.array_equal(first, second)
    assert first[0] in (0.0, 1.0)


def test_stochastic_rounder_clamp_must_be_a_level():
    with pytest.raises(InvalidParameterError) as info:
        ApproxOperator.stochastic_rounder(0.5, 0.7)
    assert info.value.details["clamp"] == 0.7
    op = ApproxOperator.stochastic_rounder(0.5, 1.0)
    draws = op.transform_weights(np.full(2000, 0.95), np.random.default_rng(3))
    assert set(np.unique(draws).tolist()) <= {0.5, 1.0}
    assert draws.max() <= 1.0


def test_deterministic_operator_ignores_seed():
    op = ApproxOperator.uniform_quantizer(0.5, 1.0)
    h = Hypothesis.linear([0.6])
    assert np.array_equal(apply_operator(op, h, 1).weights, apply_operator(op, h, 2).weights)


def test_samples_validate_shapes_and_values():
    with pytest.raises(DimensionMismatchError):
        LabelledSample([[1.0], [2.0]], [0.0])
    with pytest.raises(InvalidParameterError):
        UnlabelledSample([[np.nan]])


def _task(**kwargs):
    return SyntheticTask(Hypothesis.linear([0.7, -0.4]), **kwargs)


def test_generate_is_deterministic_per_seed_and_stream():
    task = _task(label_noise_sd=0.1, seed=3)
    a = generate(task, 20)
    b = generate(task, 20)
    c = generate(task, 20, stream=1)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.inputs, c.inputs)
    assert a.source_id == "synthetic:3:labelled:0"


def test_generate_respects_input_law():
    X = generate(_task(box_low=0.0, box_high=0.5), 200, labelled=False).inputs
    assert X.min() >= 0.0 and X.max() <= 0.5
    mixture = _task(input_law="gaussian_mixture", centers=[[5.0, 5.0]], sd=0.01)
    assert np.allclose(generate(mixture, 10, labelled=False).inputs, 5.0, atol=0.1)


def test_true_error_of_noiseless_teacher_is_zero():
    task = _task()
    estimate = true_error_mc(task.teacher, task, LossSpec(), 5000, seed=1)
    assert estimate.value == 0.0
    assert estimate.std_error == 0.0
    assert not estimate.certified


def test_true_error_matches_closed_form():
    # |0.5 x| with x uniform on [0, 1] has mean 0.25
    task = SyntheticTask(Hypothesis.linear([0.0]), box_low=0.0, box_high=1.0)
    estimate = true_error_mc(Hypothesis.linear([0.5]), task, LossSpec(), 100000, seed=4)
    assert estimate.n == 100000
    assert abs(estimate.value - 0.25) <= 3 * estimate.std_error


def test_gaussian_input_mean_is_centred():
    m = 100000
    X = generate(SyntheticTask(Hypothesis.linear([0.0]), input_law="gaussian"), m, labelled=False).inputs
    assert abs(float(X.mean())) <= 4.0 / np.sqrt(m)


def test_summarize_draws_standard_error():
    summary = summarize_draws(np.array([0.0, 1.0, 0.0, 1.0]))
    assert summary.value == 0.5
    assert summary.std_error == pytest.approx(np.std([0, 1, 0, 1], ddof=1) / 2.0)


def test_sample_csv_round_trip(tmp_path):
    s = generate(_task(label_noise_sd=0.3, seed=5), 15)
    path = write_sample_csv(s, str(tmp_path / "s.csv"))
    loaded = read_sample_csv(path)
    assert isinstance(loaded, LabelledSample)
    assert np.array_equal(loaded.inputs, s.inputs)
    assert np.array_equal(loaded.targets, s.targets)


def test_unlabelled_csv_has_no_target(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("x0,x1\n1,2\n3,4\n", encoding="utf-8")
    loaded = read_sample_csv(str(path))
    assert isinstance(loaded, UnlabelledSample)
    assert loaded.m == 2 and loaded.d == 2


@pytest.mark.parametrize("content", ["x0,x1\n1,abc\n", "x0\n1\ninf\n", ""])
def test_malformed_csv_raises_ingestion_error(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(IngestionError) as info:
        read_sample_csv(str(path))
    assert info.value.details["path"] == str(path)


def test_missing_csv_raises_ingestion_error(tmp_path):
    with pytest.raises(IngestionError):
        read_sample_csv(str(tmp_path / "nope.csv"))

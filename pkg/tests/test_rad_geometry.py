import json
import math
import os

import numpy as np
import pytest
from scipy.stats import ortho_group

from core.errors import ConfigError, DimensionMismatchError, EnumerationLimitError, InvalidParameterError
from core.model import ApproxOperator, Hypothesis, UnlabelledSample
from core.rad_geometry import (CERTIFIED_UPPER, CLOSED_FORM, EXACT_ENUMERATION, MAX_EXACT_M, MONTE_CARLO,
                               GeometryModel, RadEstimate, SensitivityPointSet, cluster_bound, conjugate_norm,
                               crude_bounds, crude_decomposition_bound, ellipse_rademacher, ellipse_support,
                               exact_rademacher_matrix, exact_rademacher_pointset, exact_rademacher_support,
                               geometry_rademacher, kernel_sensitivity_class_bound, massart_bound,
                               mc_rademacher_matrix, operator_norm_lower_estimate, positive_orthant_ball_sup,
                               rotated_ellipse_support, rotated_union_bound, sensitivity_pointset,
                               union_ellipse_bound, union_support)


@pytest.mark.parametrize("mu,p,expected", [
    ([3.0, 4.0], 2.0, 2.5),
    ([1.0, 1.0, 1.0, 1.0], 2.0, 0.5),
    ([4.0, 2.0], 1.0, 2.0),
    ([1.0, 2.0], math.inf, 1.5),
])
def test_ellipse_closed_form(mu, p, expected):
    estimate = ellipse_rademacher(mu, p, len(mu))
    assert estimate.value == pytest.approx(expected)
    assert estimate.method == CLOSED_FORM
    assert estimate.certified


def test_ellipse_closed_form_matches_enumeration():
    mu = [0.3, 1.2, 0.7, 2.0, 0.1]
    for p in (1.0, 1.5, 2.0, 3.0):
        exact = exact_rademacher_support(ellipse_support(mu, p), len(mu))
        assert exact.method == EXACT_ENUMERATION
        assert exact.value == pytest.approx(ellipse_rademacher(mu, p, len(mu)).value, rel=1e-12)


def test_union_of_axis_ellipses():
    estimate = union_ellipse_bound([[3.0, 4.0], [1.0, 5.0]], 2.0, 2)
    assert estimate.value == pytest.approx(math.sqrt(26.0) / 2.0)
    assert estimate.metadata["argmax_component"] == 1
    exact = exact_rademacher_support(union_support([[3.0, 4.0], [1.0, 5.0]], 2.0), 2)
    assert exact.value == pytest.approx(estimate.value)


def test_ellipse_rejects_nonpositive_axis_and_length_mismatch():
    with pytest.raises(InvalidParameterError):
        ellipse_rademacher([1.0, 0.0], 2.0, 2)
    with pytest.raises(DimensionMismatchError):
        ellipse_rademacher([1.0, 2.0], 2.0, 3)


def test_single_row_conventions():
    absolute = exact_rademacher_matrix([[1.0, 1.0]], absolute=True)
    signed = exact_rademacher_matrix([[1.0, 1.0]])
    assert absolute.value == pytest.approx(0.5)
    assert absolute.metadata["convention"] == "absolute"
    assert signed.value == 0.0


def test_enumeration_limit():
    with pytest.raises(EnumerationLimitError) as info:
        exact_rademacher_matrix(np.ones((1, MAX_EXACT_M + 1)))
    assert info.value.details["suggestion"] == "monte_carlo"
    with pytest.raises(EnumerationLimitError):
        RadEstimate(0.1, EXACT_ENUMERATION, MAX_EXACT_M + 1)


def test_monte_carlo_is_seeded_and_close_to_exact():
    M = np.random.default_rng(3).uniform(0.0, 1.0, size=(5, 8))
    a = mc_rademacher_matrix(M, 20000, seed=4)
    b = mc_rademacher_matrix(M, 20000, seed=4)
    exact = exact_rademacher_matrix(M)
    assert a.value == b.value
    assert a.method == MONTE_CARLO and not a.certified
    assert abs(a.value - exact.value) <= 5 * a.std_error


def test_pointset_from_hypotheses():
    op = ApproxOperator.uniform_quantizer(0.5, 1.0)
    s = UnlabelledSample([[1.0], [-2.0]])
    ps = sensitivity_pointset([Hypothesis.linear([0.6]), Hypothesis.linear([0.5])], op, s)
    assert np.allclose(ps.points, [[0.1, 0.2], [0.0, 0.0]])
    assert exact_rademacher_pointset(ps).value >= 0.0


def test_pointset_rejects_negative_entries():
    with pytest.raises(InvalidParameterError):
        SensitivityPointSet([[0.1, -0.2]])


def test_positive_orthant_ball_enumeration_within_crude_sandwich():
    # B_p^+ of radius R m^{1/p} with R = 1, m = 2, p = 2
    radius = 1.0 * 2.0 ** 0.5
    exact = exact_rademacher_support(lambda sigma: positive_orthant_ball_sup(sigma, radius, 2.0), 2)
    assert exact.value == pytest.approx((2.0 + 2.0 * math.sqrt(2.0)) / 8.0)
    lower, upper = crude_bounds(1.0, 2.0)
    assert lower <= exact.value <= upper


def test_positive_orthant_sup_single_vector():
    assert positive_orthant_ball_sup([1.0, -1.0, 1.0], 2.0, 2.0) == pytest.approx(2.0 * math.sqrt(2.0))


def test_rotated_union_with_identity_equals_axis_union():
    mus = [[3.0, 4.0], [1.0, 5.0]]
    rotated = rotated_union_bound([(np.eye(2), mu) for mu in mus], 2.0, 2)
    assert rotated.value == union_ellipse_bound(mus, 2.0, 2).value
    assert rotated.method == CLOSED_FORM


def test_rotated_union_dominates_enumeration():
    rng = np.random.default_rng(8)
    m = 6
    V = ortho_group.rvs(m, random_state=rng)
    mu = rng.uniform(0.1, 2.0, size=m)
    bound = rotated_union_bound([(V, mu)], 2.0, m)
    exact = exact_rademacher_support(rotated_ellipse_support(V, mu, 2.0), m)
    assert bound.method == CERTIFIED_UPPER
    assert exact.value <= bound.value + 1e-12


def test_operator_norm_lower_estimate_is_below_certified_norm():
    rng = np.random.default_rng(2)
    m = 3
    V = ortho_group.rvs(m, random_state=rng)
    mu = np.array([0.5, 1.0, 2.0])
    lower = operator_norm_lower_estimate(V, mu, 2.0, n_starts=4, seed=1)
    upper = rotated_union_bound([(V, mu)], 2.0, m).value * m
    assert 0.0 < lower <= upper + 1e-9


def test_rotation_must_be_orthogonal():
    with pytest.raises(InvalidParameterError):
        rotated_union_bound([([[1.0, 1.0], [0.0, 1.0]], [1.0, 1.0])], 2.0, 2)


def test_cluster_bound_with_zero_center_reduces_to_rotated_union():
    V = np.eye(3)
    mu = [1.0, 2.0, 3.0]
    clustered = cluster_bound([(np.zeros(3), V, mu)], 2.0, 3)
    assert clustered.value == pytest.approx(rotated_union_bound([(V, mu)], 2.0, 3).value)
    assert clustered.metadata["massart_term"] == 0.0


def test_cluster_bound_adds_massart_term_for_centers():
    clustered = cluster_bound([((0.0, 0.0), np.eye(2), (1.0, 1.0)), ((1.0, 1.0), np.eye(2), (1.0, 1.0))], 2.0, 2)
    expected = math.sqrt(2.0) / 2.0 + math.sqrt(2.0) * math.sqrt(2.0 * math.log(2.0)) / 2.0
    assert clustered.value == pytest.approx(expected)
    assert clustered.value == pytest.approx(1.539661, abs=1e-6)
    assert clustered.metadata["rotated_union_term"] == pytest.approx(math.sqrt(2.0) / 2.0)


def test_rotated_union_at_45_degrees_for_p_one():
    c = math.sqrt(2.0) / 2.0
    estimate = rotated_union_bound([(np.array([[c, -c], [c, c]]), (2.0, 1.0))], 1.0, 2)
    assert estimate.value == pytest.approx(math.sqrt(2.0))
    assert estimate.method == CLOSED_FORM


def _union(mu, p, m):
    return union_ellipse_bound([mu, np.full(m, 0.5)], p, m)


def _clustered(mu, p, m):
    return cluster_bound([(np.zeros(m), np.eye(m), mu), (np.ones(m), np.eye(m), np.full(m, 0.5))], p, m)


@pytest.mark.parametrize("bound_fn", [ellipse_rademacher, _union, _clustered])
@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, math.inf])
def test_enlarging_an_axis_never_decreases_the_bound(bound_fn, p):
    rng = np.random.default_rng(12)
    m = 4
    for _ in range(25):
        mu = rng.uniform(0.1, 2.0, size=m)
        larger = mu.copy()
        larger[rng.integers(m)] += rng.uniform(0.0, 1.0)
        assert bound_fn(larger, p, m).value >= bound_fn(mu, p, m).value - 1e-12


def test_massart_bound():
    assert massart_bound([[3.0, 4.0]]) == 0.0
    assert massart_bound([[3.0, 4.0], [0.0, 1.0]]) == pytest.approx(5.0 * math.sqrt(2.0 * math.log(2.0)) / 2.0)


def test_kernel_class_bound_forms():
    estimate = kernel_sensitivity_class_bound(0.5, [1.0, 1.0, 1.0, 1.0])
    assert estimate.value == pytest.approx(0.25)
    assert estimate.metadata["displayed_form_value"] == pytest.approx(0.5)


def test_crude_decomposition_bound():
    estimate = crude_decomposition_bound(0.1, RadEstimate(0.2, CLOSED_FORM, 10), ha_singleton=True)
    assert estimate.value == pytest.approx(0.3)
    assert estimate.metadata["equality"] is True


def test_conjugate_norm():
    assert conjugate_norm([3.0, 4.0], 2.0) == pytest.approx(5.0)
    assert conjugate_norm([3.0, -4.0], 1.0) == 4.0
    assert conjugate_norm([3.0, -4.0], math.inf) == 7.0


def test_geometry_model_from_fixture(fixtures_dir):
    with open(os.path.join(fixtures_dir, 'ellipse.json'), 'r', encoding='utf-8') as f:
        model = GeometryModel.from_dict(json.load(f))
    assert model.m == 2
    assert geometry_rademacher(model).value == pytest.approx(2.5)
    assert GeometryModel.from_dict(model.to_dict()) == model


def test_geometry_model_pball_and_clustered():
    pball = GeometryModel.from_dict({"variant": "pball", "p": 2, "m": 4, "radius": 0.5})
    estimate = geometry_rademacher(pball)
    assert estimate.value == 0.5
    assert estimate.method == CERTIFIED_UPPER
    assert estimate.metadata["exact_for"] == "full_ball"
    assert estimate.metadata["crude_lower"] == pytest.approx(0.5 / (2.0 * math.sqrt(2.0)))
    clustered = GeometryModel.from_dict({
        "variant": "clustered", "p": 2,
        "components": [{"mu": [1, 1], "center": [0, 0]}, {"mu": [1, 1], "center": [3, 4]}],
    })
    assert geometry_rademacher(clustered).method == CERTIFIED_UPPER


def test_geometry_model_rejects_bad_input():
    with pytest.raises(ConfigError) as info:
        GeometryModel.from_dict({"variant": "ellipse", "p": 2})
    assert "mu" in info.value.message
    with pytest.raises(ConfigError) as info:
        GeometryModel.from_dict({"variant": "ellipse", "p": 0.5, "mu": [1]})
    assert info.value.details["field"] == "p"
    with pytest.raises(InvalidParameterError):
        GeometryModel.from_dict({"variant": "rotated_union", "p": 2,
                                 "components": [{"mu": [1, 1], "rotation": [[1, 1], [0, 1]]}]})


def test_rad_estimate_dict_round_trip():
    estimate = RadEstimate(0.12, MONTE_CARLO, 30, n_sigma=100, seed=3, std_error=0.01)
    data = estimate.to_dict()
    assert data["certified"] is False
    assert RadEstimate.from_dict(data) == estimate

import pytest

from core.errors import InvalidParameterError, UnknownSuiteError
from services.suite_manager import SuiteManager
from services.validation_suites import SUITES, run_suite, singleton_omega_reduction

# Reduced sizes keep the default run fast; the slow tests use the shipped defaults.
SMALL = {
    "ellipse_exact": {"trials": 20, "max_m": 8},
    "union_exact": {"trials": 20, "max_m": 8},
    "crude_sandwich": {"trials": 20, "max_m": 8},
    "cluster_dominance": {"trials": 20},
    "kernel_dominance": {"trials": 5, "n_sigma": 500, "m_range": [5, 20]},
    "stochastic_unbiased": {"trials": 1, "n_draws": 20000, "std_errors": 4.0},
    "learner_oracle": {"trials": 3, "points_per_axis": 7},
    "lemma1": {"trials": 10, "n_mc": 20000, "n_sigma": 500},
    "prop10": {"trials": 10, "n_mc": 20000, "n_sigma": 500},
    "prop2": {"trials": 10, "pool_size": 60, "n_mc": 5000, "n_sigma": 200},
    "prop3": {"trials": 10, "pool_size": 60, "n_mc": 5000, "n_sigma": 200},
    "prop4": {"trials": 5, "points_per_axis": 7, "n_mc": 5000, "n_sigma": 200},
}


def test_every_registered_suite_has_parameters():
    assert sorted(SUITES) == SuiteManager.list_suites()
    assert set(SMALL) == set(SUITES)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_suite_passes_at_reduced_size(name):
    overrides = dict(SMALL[name])
    trials = overrides.pop("trials")
    report = run_suite(name, trials=trials, seed=1, **overrides)
    assert report.trials == trials
    assert report.passed, report.to_dict()
    if report.kind == "oracle":
        assert report.violations == 0
        assert report.floor == 1.0
    else:
        assert report.floor == pytest.approx(1.0 - 2.0 * SuiteManager.get_suite(name)["delta"])


def test_suite_runs_are_deterministic_per_seed():
    first = run_suite("ellipse_exact", trials=5, seed=3, max_m=6)
    second = run_suite("ellipse_exact", trials=5, seed=3, max_m=6)
    assert first.to_dict() == second.to_dict()


def test_suite_results_do_not_depend_on_threads():
    serial = run_suite("cluster_dominance", trials=8, seed=2)
    parallel = run_suite("cluster_dominance", trials=8, seed=2, threads=4)
    assert serial.to_dict() == parallel.to_dict()


def test_prop10_records_low_sensitivity_precondition():
    report = run_suite("prop10", **{k: v for k, v in SMALL["prop10"].items()})
    assert report.details["low_sensitivity"] is True
    assert report.details["max_d2"] <= report.details["t"]


def test_lattice_rounding_reduces_to_the_deterministic_quantizer():
    reduces, info = singleton_omega_reduction(SuiteManager.get_suite("stochastic_unbiased"), seed=3)
    assert reduces
    assert info["term_gap"] <= 1e-12
    assert info["expected_sensitivity"] == info["sensitivity"] == 0.0
    assert info["empirical_error"] > 0.0
    assert info["rademacher"] > 0.0


def test_unknown_suite():
    with pytest.raises(UnknownSuiteError) as info:
        run_suite("prop99")
    assert "ellipse_exact" in info.value.details["available"]


def test_zero_trials_rejected():
    with pytest.raises(InvalidParameterError):
        run_suite("ellipse_exact", trials=0)


def test_overrides_do_not_leak_into_defaults():
    params = SuiteManager.get_suite("lemma1", trials=3, m=None)
    assert params["trials"] == 3
    assert params["m"] == 100
    assert SuiteManager.get_suite("lemma1")["trials"] == 500


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(SMALL))
def test_suite_passes_at_full_size(name):
    report = run_suite(name, seed=0, threads=4)
    assert report.passed, report.to_dict()

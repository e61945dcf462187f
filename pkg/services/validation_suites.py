"""Seeded validation suites for the complexity oracles, the deviation bounds and the learners.

Oracle suites compare two computations that must agree (or dominate) on
every trial. Probability suites repeat a random experiment and count how
often a high-probability bound is violated; they pass when coverage stays
at or above 1 - 2 delta.
"""
import dataclasses
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import ortho_group

from core.bounds import (hoeffding_term, joint_bounds, lambda_equivalence_bound, regularized_bound,
                         stochastic_bound, stochastic_fixed_omega_bound)
from core.errors import InvalidParameterError
from core.model import (ApproxOperator, FeatureMap, Hypothesis, LossSpec, SyntheticTask, UnlabelledSample,
                        apply_operator, empirical_error, generate, predict_batch, sample_inputs, true_error_mc)
from core.rad_geometry import (cluster_bound, crude_bounds, ellipse_rademacher, ellipse_support,
                               exact_rademacher_matrix, exact_rademacher_support, kernel_sensitivity_class_bound,
                               mc_rademacher_matrix, mc_rademacher_pointset, positive_orthant_ball_sup,
                               quantized_linear_rademacher_mc, rotated_union_bound, sample_cluster_points,
                               sensitivity_pointset, union_ellipse_bound, union_support)
from core.sensitivity import (SensitivityEstimate, empirical_sensitivity, expected_sensitivity,
                              fast_rate_deviation_bound, sensitivity_deviation_bound, true_sensitivity_mc,
                              uniform_sensitivity_constant)
from core.utils import derive_seed, make_rng
from services.learners import (SearchDomain, SensitivityFunction, ThresholdSchedule, analytic_lambda_erm,
                               approx_error, constrained_erm, lambda_erm, lambda_grid_srm, make_grid_rad_estimator,
                               sensitivity_regularized_erm, srm_learner)
from services.suite_manager import SuiteManager

logger = logging.getLogger(__name__)


@dataclass
class TrialOutcome:
    violated: bool
    slack: float
    info: Dict[str, Any] = field(default_factory=dict)


@dataclass
class CoverageReport:
    suite: str
    bound_name: str
    trials: int
    violations: int
    target: float
    floor: float
    mean_slack: float
    passed: bool
    seed: int
    kind: str
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        return 1.0 - self.violations / self.trials

    def to_dict(self) -> Dict[str, Any]:
        return {
            "suite": self.suite,
            "bound_name": self.bound_name,
            "kind": self.kind,
            "trials": self.trials,
            "violations": self.violations,
            "coverage": self.coverage,
            "target": self.target,
            "floor": self.floor,
            "mean_slack": self.mean_slack,
            "passed": self.passed,
            "seed": self.seed,
            "details": self.details,
        }


TrialFn = Callable[[int, int], TrialOutcome]


def _run_trials(trial: TrialFn, suite: str, trials: int, seed: int, threads: int) -> List[TrialOutcome]:
    """Run trial(index, trial_seed) for every index; results keep index order."""
    if trials < 1:
        raise InvalidParameterError("trials must be at least 1", {"trials": trials})

    def run(i: int) -> TrialOutcome:
        return trial(i, derive_seed(seed, suite, i))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(run, range(trials)))
    return [run(i) for i in range(trials)]


def _summarise(suite: str, bound_name: str, params: Dict[str, Any], outcomes: List[TrialOutcome], seed: int,
               details: Optional[Dict[str, Any]] = None, precondition: bool = True) -> CoverageReport:
    kind = params["kind"]
    violations = sum(1 for o in outcomes if o.violated)
    trials = len(outcomes)
    if kind == "probability":
        delta = float(params["delta"])
        target, floor = 1.0 - delta, 1.0 - 2.0 * delta
        passed = (1.0 - violations / trials) >= floor
    else:
        target = floor = 1.0
        passed = violations == 0
    details = dict(details or {})
    failing = [dict(o.info, trial=i) for i, o in enumerate(outcomes) if o.violated]
    if failing:
        details["first_violations"] = failing[:5]
    report = CoverageReport(suite, bound_name, trials, violations, target, floor,
                            float(np.mean([o.slack for o in outcomes])), passed and precondition, seed, kind,
                            details)
    log = logger.info if report.passed else logger.warning
    log("suite %s: %d/%d violations, coverage %.4f (floor %.4f), passed=%s",
        suite, violations, trials, report.coverage, floor, report.passed)
    return report


def _box_corners(d: int, low: float, high: float) -> np.ndarray:
    return np.array(list(itertools.product([low, high], repeat=d)), dtype=float)


def _uniform_choice(rng: np.random.Generator, values):
    return values[int(rng.integers(len(values)))]


# -- geometry oracles --------------------------------------------------------

def ellipse_exact(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    tol = float(params["tolerance"])
    lo, hi = params["mu_range"]

    def trial(i: int, s: int) -> TrialOutcome:
        rng = make_rng(s)
        m = int(rng.integers(1, params["max_m"] + 1))
        p = float(_uniform_choice(rng, params["p_values"]))
        mu = rng.uniform(lo, hi, size=m)
        enumerated = exact_rademacher_support(ellipse_support(mu, p), m).value
        closed = ellipse_rademacher(mu, p, m).value
        diff = abs(enumerated - closed)
        return TrialOutcome(diff > tol * max(1.0, closed), tol - diff,
                            {"m": m, "p": p, "enumerated": enumerated, "closed_form": closed})

    outcomes = _run_trials(trial, "ellipse_exact", params["trials"], seed, threads)
    return _summarise("ellipse_exact", "ellipse_closed_form", params, outcomes, seed)


def union_exact(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    tol = float(params["tolerance"])
    lo, hi = params["mu_range"]

    def trial(i: int, s: int) -> TrialOutcome:
        rng = make_rng(s)
        m = int(rng.integers(1, params["max_m"] + 1))
        k = int(rng.integers(1, params["max_components"] + 1))
        p = float(_uniform_choice(rng, params["p_values"]))
        mus = [rng.uniform(lo, hi, size=m) for _ in range(k)]
        enumerated = exact_rademacher_support(union_support(mus, p), m).value
        closed = union_ellipse_bound(mus, p, m).value
        diff = abs(enumerated - closed)
        return TrialOutcome(diff > tol * max(1.0, closed), tol - diff,
                            {"m": m, "p": p, "components": k, "enumerated": enumerated, "closed_form": closed})

    outcomes = _run_trials(trial, "union_exact", params["trials"], seed, threads)
    return _summarise("union_exact", "union_closed_form", params, outcomes, seed)


def crude_sandwich(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    tol = float(params["tolerance"])
    lo, hi = params["radius_range"]

    def trial(i: int, s: int) -> TrialOutcome:
        rng = make_rng(s)
        m = int(rng.integers(1, params["max_m"] + 1))
        p = float(_uniform_choice(rng, params["p_values"]))
        radius = float(rng.uniform(lo, hi))
        ball_radius = radius * m ** (1.0 / p)
        enumerated = exact_rademacher_support(lambda sigma: positive_orthant_ball_sup(sigma, ball_radius, p), m).value
        lower, upper = crude_bounds(radius, p)
        violated = enumerated < lower - tol or enumerated > upper + tol
        logger.debug("crude_sandwich m=%d p=%s: %.6g in [%.6g, %.6g]", m, p, enumerated, lower, upper)
        return TrialOutcome(violated, min(enumerated - lower, upper - enumerated),
                            {"m": m, "p": p, "radius": radius, "enumerated": enumerated,
                             "lower": lower, "upper": upper})

    outcomes = _run_trials(trial, "crude_sandwich", params["trials"], seed, threads)
    return _summarise("crude_sandwich", "crude_sandwich", params, outcomes, seed)


def cluster_dominance(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    tol = float(params["tolerance"])
    lo, hi = params["mu_range"]
    m_lo, m_hi = params["m_range"]

    def trial(i: int, s: int) -> TrialOutcome:
        rng = make_rng(s)
        m = int(rng.integers(max(2, m_lo), m_hi + 1))
        k = int(rng.integers(1, params["max_components"] + 1))
        p = float(_uniform_choice(rng, params["p_values"]))
        components = []
        for _ in range(k):
            V = ortho_group.rvs(m, random_state=rng)
            mu = rng.uniform(lo, hi, size=m)
            c = rng.normal(0.0, params["center_scale"], size=m)
            components.append((c, V, mu))
        n = int(rng.integers(1, params["max_points"] + 1))
        points = sample_cluster_points(components, p, n, rng)
        enumerated = exact_rademacher_matrix(points).value
        bound = cluster_bound(components, p, m).value

        # with every center at the origin the Massart term vanishes
        centred = [(np.zeros(m), V, mu) for _, V, mu in components]
        reduces = cluster_bound(centred, p, m).value == rotated_union_bound([(V, mu) for _, V, mu in components],
                                                                           p, m).value
        violated = enumerated > bound + tol or not reduces
        return TrialOutcome(violated, bound - enumerated,
                            {"m": m, "p": p, "components": k, "points": n, "enumerated": enumerated,
                             "bound": bound, "zero_center_reduction": reduces})

    outcomes = _run_trials(trial, "cluster_dominance", params["trials"], seed, threads)
    return _summarise("cluster_dominance", "cluster_bound", params, outcomes, seed)


def _random_feature_map(kind: str, d: int, rng: np.random.Generator) -> FeatureMap:
    if kind == "identity":
        return FeatureMap.identity(d)
    if kind == "polynomial":
        return FeatureMap.polynomial(d, 2)
    n_centers = int(rng.integers(1, 6))
    return FeatureMap.rbf(rng.uniform(-1.0, 1.0, size=(n_centers, d)), float(rng.uniform(0.5, 2.0)))


def kernel_dominance(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m_lo, m_hi = params["m_range"]
    step_lo, step_hi = params["step_range"]
    n_se = float(params["std_errors"])

    def trial(i: int, s: int) -> TrialOutcome:
        rng = make_rng(s)
        d = int(rng.integers(1, params["max_d"] + 1))
        m = int(rng.integers(m_lo, m_hi + 1))
        step = float(rng.uniform(step_lo, step_hi))
        kind = _uniform_choice(rng, params["feature_maps"])
        fm = _random_feature_map(kind, d, rng)
        X = rng.uniform(-1.0, 1.0, size=(m, d))
        mc = quantized_linear_rademacher_mc(fm.transform(X), step, params["n_sigma"], derive_seed(s, "sigma"))
        # sup_w ||w - Q(w)||_2 over the unclamped box of residuals
        sup_residual = step / 2.0 * math.sqrt(fm.dim)
        bound = kernel_sensitivity_class_bound(sup_residual, fm.gram_diagonal(X)).value
        lower_confidence = mc.value - n_se * mc.std_error
        return TrialOutcome(lower_confidence > bound, bound - mc.value,
                            {"d": d, "m": m, "feature_map": kind, "step": step, "mc": mc.value,
                             "std_error": mc.std_error, "bound": bound})

    outcomes = _run_trials(trial, "kernel_dominance", params["trials"], seed, threads)
    return _summarise("kernel_dominance", "kernel_sensitivity_class_bound", params, outcomes, seed)


def singleton_omega_reduction(params: Dict[str, Any], seed: int) -> Tuple[bool, Dict[str, Any]]:
    """Stochastic rounding of lattice weights against the deterministic quantizer with the same step.

    On lattice points Omega collapses to one outcome, so the expected-over-omega data terms must
    coincide with the fixed-omega ones computed from the deterministic operator.
    """
    step = float(params["step"])
    stochastic = ApproxOperator.stochastic_rounder(step)
    deterministic = ApproxOperator.uniform_quantizer(step, 2.0 * step)
    W = step * np.array(list(itertools.product(range(-2, 3), repeat=2)), dtype=float)
    hyps = [Hypothesis.linear(w) for w in W]
    rng = make_rng(seed, "lattice")
    task = SyntheticTask(hyps[int(rng.integers(len(hyps)))], label_noise_sd=0.5, seed=seed)
    labelled = generate(task, int(params["m"]))
    unlabelled = generate(task, int(params["m"]), labelled=False)
    h = hyps[int(rng.integers(len(hyps)))]
    loss = LossSpec()
    n_omega, n_sigma = int(params["n_omega"]), int(params["n_sigma"])
    sigma_seed = derive_seed(seed, "sigma")

    omega_seeds = [derive_seed(seed, "omega", j) for j in range(n_omega)]
    exp_emp = float(np.mean([empirical_error(apply_operator(stochastic, h, w), labelled, loss) for w in omega_seeds]))
    exp_sens = expected_sensitivity(h, stochastic, unlabelled, 1.0, n_omega, derive_seed(seed, "sensitivity"))
    exp_rad = float(np.mean([
        mc_rademacher_matrix([predict_batch(apply_operator(stochastic, g, w), labelled.inputs) for g in hyps],
                             n_sigma, sigma_seed).value
        for w in omega_seeds
    ]))

    emp = empirical_error(apply_operator(deterministic, h), labelled, loss)
    sens = empirical_sensitivity(h, deterministic, unlabelled)
    rad = mc_rademacher_matrix([predict_batch(apply_operator(deterministic, g), labelled.inputs) for g in hyps],
                               n_sigma, sigma_seed).value

    m, delta = labelled.m, float(params["delta"])
    expected = stochastic_bound(exp_emp, exp_sens.value, exp_rad, 1.0, m, delta)
    fixed = stochastic_fixed_omega_bound(emp, sens.value, rad, 1.0, m, delta)
    gap = max(abs(a - b) for (_, a), (_, b) in zip(expected.terms[:3], fixed.terms[:3]))
    reduces = gap <= 1e-12 and exp_sens.std_error <= 1e-12
    return reduces, {"term_gap": gap, "expected_sensitivity": exp_sens.value, "sensitivity": sens.value,
                     "empirical_error": emp, "rademacher": rad}


def stochastic_unbiased(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    step = float(params["step"])
    weight = float(params["weight"])
    n = int(params["n_draws"])
    frac = weight / step - math.floor(weight / step)
    op = ApproxOperator.stochastic_rounder(step)

    def trial(i: int, s: int) -> TrialOutcome:
        draws = op.transform_weights(np.full(n, weight), make_rng(s))
        tolerance = params["std_errors"] * step * math.sqrt(frac * (1.0 - frac) / n)
        deviation = abs(float(np.mean(draws)) - weight)
        reduces, reduction = singleton_omega_reduction(params, derive_seed(s, "singleton"))
        return TrialOutcome(deviation > tolerance or not reduces, tolerance - deviation,
                            {"mean": float(np.mean(draws)), "tolerance": tolerance, "singleton_reduction": reduces,
                             **reduction})

    outcomes = _run_trials(trial, "stochastic_unbiased", params["trials"], seed, threads)
    return _summarise("stochastic_unbiased", "stochastic_rounding_mean", params, outcomes, seed)


# -- deviation bounds ----------------------------------------------------------

def _grid_setup(params: Dict[str, Any], seed: int, p_values: Tuple[float, ...], threads: int):
    """Grid hypotheses over uniform [-1, 1]^2 inputs with Monte Carlo true sensitivities (one column per p)."""
    domain = SearchDomain(2, float(params["half_width"]), "grid", int(params["points_per_axis"]))
    W = domain.grid_points()
    op = ApproxOperator.uniform_quantizer(params["step"], params["clamp"])
    task = SyntheticTask(Hypothesis.linear(np.zeros(2)), seed=seed)
    hyps = [Hypothesis.linear(w) for w in W]
    common_seed = derive_seed(seed, "true_sensitivity")

    def true_values(h: Hypothesis) -> List[float]:
        return [true_sensitivity_mc(h, op, task, p, int(params["n_mc"]), common_seed).value for p in p_values]

    table = np.array(_map(true_values, hyps, threads))
    C = uniform_sensitivity_constant(W, op, _box_corners(2, task.box_low, task.box_high))
    return op, task, hyps, table, C


def _map(fn, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(fn, items))
    return [fn(x) for x in items]


def _deviation_trial(suite: str, params: Dict[str, Any], op: ApproxOperator, task: SyntheticTask,
                     hyps: List[Hypothesis], true_d: np.ndarray, bound_fn) -> TrialFn:
    m = int(params["m"])

    def trial(i: int, s: int) -> TrialOutcome:
        sample = UnlabelledSample(sample_inputs(task, m, make_rng(s)), f"{suite}:{i}")
        ps = sensitivity_pointset(hyps, op, sample)
        d_hat = ps.points.mean(axis=1)
        rad = mc_rademacher_pointset(ps, int(params["n_sigma"]), derive_seed(s, "sigma"))
        bound = bound_fn(rad)
        deviation = float(np.max(np.abs(true_d - d_hat)))
        return TrialOutcome(deviation > bound.epsilon_u, bound.epsilon_u - deviation,
                            {"deviation": deviation, "epsilon_u": bound.epsilon_u, "rademacher": rad.value})

    return trial


def lemma1(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m, delta = int(params["m"]), float(params["delta"])
    op, task, hyps, table, C = _grid_setup(params, seed, (1.0,), threads)
    trial = _deviation_trial("lemma1", params, op, task, hyps, table[:, 0],
                             lambda rad: sensitivity_deviation_bound(rad, C, m, delta))
    outcomes = _run_trials(trial, "lemma1", params["trials"], seed, threads)
    return _summarise("lemma1", "sensitivity_deviation", params, outcomes, seed, {"C": C, "hypotheses": len(hyps)})


def prop10(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m, delta, t = int(params["m"]), float(params["delta"]), float(params["t"])
    op, task, hyps, table, C = _grid_setup(params, seed, (1.0, 2.0), threads)
    max_d2 = float(table[:, 1].max())
    low_sensitivity = max_d2 <= t
    if not low_sensitivity:
        logger.warning("prop10: grid class has max D^2 = %.6g above t = %s", max_d2, t)
    trial = _deviation_trial("prop10", params, op, task, hyps, table[:, 0],
                             lambda rad: fast_rate_deviation_bound(rad, t, C, m, delta))
    outcomes = _run_trials(trial, "prop10", params["trials"], seed, threads)
    return _summarise("prop10", "fast_rate_deviation", params, outcomes, seed,
                      {"C": C, "max_d2": max_d2, "t": t, "low_sensitivity": low_sensitivity},
                      precondition=low_sensitivity)


# -- learner guarantees ----------------------------------------------------------

@dataclass
class OracleTables:
    """A finite hypothesis pool with Monte Carlo true errors and sensitivities."""

    task: SyntheticTask
    domain: SearchDomain
    weights: np.ndarray
    op: ApproxOperator
    loss: LossSpec
    err_f: np.ndarray
    err_af: np.ndarray
    sensitivity: np.ndarray

    def index(self, h: Hypothesis) -> int:
        return self._lookup[h.weights.tobytes()]

    def __post_init__(self):
        self._lookup = {w.tobytes(): i for i, w in enumerate(np.array(self.weights, dtype=float))}

    def sensitivity_fn(self) -> SensitivityFunction:
        """True D^1 read from the table instead of re-estimated per candidate."""
        provenance = f"table:{self.task.seed}"
        return SensitivityFunction(
            "monte_carlo_true",
            lambda h: SensitivityEstimate(1.0, float(self.sensitivity[self.index(h)]), "monte_carlo_true",
                                          provenance=provenance))

    def approx_rademacher(self, X: np.ndarray, n_sigma: int, seed: int):
        """MC complexity of the approximated pool restricted to the rows of X."""
        approx_weights = self.op.transform_weights(self.weights)
        return mc_rademacher_matrix((X @ approx_weights.T).T, n_sigma, seed)


_TABLE_CACHE: Dict[Tuple, OracleTables] = {}


def _oracle_tables(teacher: Hypothesis, domain: SearchDomain, params: Dict[str, Any], seed: int,
                   threads: int) -> OracleTables:
    key = (seed, teacher.weights.tobytes(), repr(domain), params["step"], params["clamp"],
           params["label_noise_sd"], params["rho"], params["n_mc"])
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    task = SyntheticTask(teacher, label_noise_sd=float(params["label_noise_sd"]), seed=seed)
    op = ApproxOperator.uniform_quantizer(params["step"], params["clamp"])
    loss = LossSpec("clipped_absolute", float(params["rho"]))
    W = domain.candidates()
    n_mc = int(params["n_mc"])
    err_seed, sens_seed = derive_seed(seed, "true_error"), derive_seed(seed, "true_sensitivity")

    def row(w: np.ndarray) -> Tuple[float, float, float]:
        h = Hypothesis.linear(w)
        return (true_error_mc(h, task, loss, n_mc, err_seed).value,
                true_error_mc(apply_operator(op, h), task, loss, n_mc, err_seed).value,
                true_sensitivity_mc(h, op, task, 1.0, n_mc, sens_seed).value)

    rows = np.array(_map(row, list(W), threads))
    tables = OracleTables(task, domain, W, op, loss, rows[:, 0], rows[:, 1], rows[:, 2])
    logger.info("oracle tables: %d hypotheses, %d Monte Carlo draws each", len(W), n_mc)
    _TABLE_CACHE[key] = tables
    return tables


def _pool_tables(params: Dict[str, Any], seed: int, threads: int) -> OracleTables:
    d = int(params["d"])
    teacher = Hypothesis.linear(make_rng(seed, "teacher").uniform(-1.0, 1.0, size=d))
    domain = SearchDomain(d, 1.0, "random", n_samples=int(params["pool_size"]), seed=derive_seed(seed, "pool"))
    return _oracle_tables(teacher, domain, params, seed, threads)


def prop2(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m, delta, rho = int(params["m"]), float(params["delta"]), float(params["rho"])
    tables = _pool_tables(params, seed, threads)
    t = float(np.quantile(tables.sensitivity, params["t_quantile"]))
    err_f_star = float(tables.err_f[tables.sensitivity <= t].min())
    sens_fn = tables.sensitivity_fn()

    def trial(i: int, s: int) -> TrialOutcome:
        S = generate(dataclasses.replace(tables.task, seed=s), m)
        out = constrained_erm(S, None, tables.op, t, 1.0, tables.loss, tables.domain, sensitivity_fn=sens_fn,
                              strict=False)
        j = tables.index(out.hypothesis)
        rad = tables.approx_rademacher(S.inputs, int(params["n_sigma"]), derive_seed(s, "sigma"))
        reports = joint_bounds({"err_f_star": err_f_star}, rad, rho, t, m, delta)
        af_bound, f_bound = reports["af_bound"].value, reports["f_bound"].value
        violated = tables.err_af[j] > af_bound or tables.err_f[j] > f_bound
        return TrialOutcome(violated, af_bound - float(tables.err_af[j]),
                            {"err_af": float(tables.err_af[j]), "af_bound": af_bound,
                             "err_f": float(tables.err_f[j]), "f_bound": f_bound})

    outcomes = _run_trials(trial, "prop2", params["trials"], seed, threads)
    return _summarise("prop2", "prop2_af", params, outcomes, seed, {"t": t, "err_f_star": err_f_star})


def prop3(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m, delta, rho = int(params["m"]), float(params["delta"]), float(params["rho"])
    tables = _pool_tables(params, seed, threads)
    order = np.argsort(tables.sensitivity, kind="stable")
    ts = tables.sensitivity[order].tolist()
    # best true error among hypotheses with D <= t, for each t on the grid
    err_star = np.minimum.accumulate(tables.err_f[order]).tolist()
    sens_fn = tables.sensitivity_fn()

    def trial(i: int, s: int) -> TrialOutcome:
        S = generate(dataclasses.replace(tables.task, seed=s), m)
        out = sensitivity_regularized_erm(S, tables.op, sens_fn, tables.loss, tables.domain, rho=rho)
        j = tables.index(out.hypothesis)
        rad = tables.approx_rademacher(S.inputs, int(params["n_sigma"]), derive_seed(s, "sigma"))
        report = regularized_bound(err_star, rho, ts, rad, m, delta)
        return TrialOutcome(tables.err_af[j] > report.value, report.value - float(tables.err_af[j]),
                            {"err_af": float(tables.err_af[j]), "bound": report.value,
                             "argmin_t": report.metadata["argmin_t"]})

    outcomes = _run_trials(trial, "prop3", params["trials"], seed, threads)
    return _summarise("prop3", "prop3", params, outcomes, seed)


def prop4(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m, m_u = int(params["m"]), int(params["m_u"])
    delta, rho, lam = float(params["delta"]), float(params["rho"]), float(params["lambda"])
    domain = SearchDomain(2, float(params["half_width"]), "grid", int(params["points_per_axis"]))
    tables = _oracle_tables(Hypothesis.linear(params["teacher"]), domain, params, seed, threads)
    hyps = [Hypothesis.linear(w) for w in tables.weights]
    C = uniform_sensitivity_constant(tables.weights, tables.op, _box_corners(2, -1.0, 1.0))
    sens_fn = tables.sensitivity_fn()

    def trial(i: int, s: int) -> TrialOutcome:
        task = dataclasses.replace(tables.task, seed=s)
        S = generate(task, m)
        S_u = generate(task, m_u, labelled=False)
        regularized = lambda_erm(S, S_u, tables.op, lam, 1.0, tables.loss, domain)
        j = tables.index(regularized.hypothesis)
        t = float(tables.sensitivity[j])
        constrained = constrained_erm(S, None, tables.op, t, 1.0, tables.loss, domain, sensitivity_fn=sens_fn,
                                      strict=False)
        jt = tables.index(constrained.hypothesis)

        ps = sensitivity_pointset(hyps, tables.op, S_u)
        epsilon_u = sensitivity_deviation_bound(
            mc_rademacher_pointset(ps, int(params["n_sigma"]), derive_seed(s, "sensitivity_sigma")),
            C, m_u, delta / 4.0).epsilon_u
        rad = tables.approx_rademacher(S.inputs, int(params["n_sigma"]), derive_seed(s, "sigma"))
        bound = lambda_equivalence_bound(rho, rad, m, delta, lam, epsilon_u).value
        gap = float(tables.err_af[j] - tables.err_af[jt])
        return TrialOutcome(gap > bound, bound - gap, {"gap": gap, "bound": bound, "t": t})

    outcomes = _run_trials(trial, "prop4", params["trials"], seed, threads)
    return _summarise("prop4", "prop4", params, outcomes, seed, {"C": C, "lambda": lam})


# -- learner oracle --------------------------------------------------------------

def _argmin(values: np.ndarray, feasible: Optional[np.ndarray] = None) -> int:
    idx = np.arange(len(values)) if feasible is None else np.flatnonzero(feasible)
    return int(idx[np.argmin(values[idx])])


def learner_oracle(params: Dict[str, Any], seed: int, threads: int = 1) -> CoverageReport:
    m, m_u = int(params["m"]), int(params["m_u"])
    domain = SearchDomain(2, float(params["half_width"]), "grid", int(params["points_per_axis"]))
    W = domain.grid_points()
    fm = FeatureMap.identity(2)
    lambdas = [0.0, 0.5, 1.0, 2.0]

    def trial(i: int, s: int) -> TrialOutcome:
        rng = make_rng(s)
        task = SyntheticTask(Hypothesis.linear(rng.uniform(-1.0, 1.0, size=2)), label_noise_sd=0.1, seed=s)
        S = generate(task, m)
        S_u = generate(task, m_u, labelled=False)
        op = ApproxOperator.uniform_quantizer(_uniform_choice(rng, [0.25, 0.5]), 1.0)
        loss = LossSpec(_uniform_choice(rng, ["clipped_absolute", "clipped_hinge", "clipped_squared"]),
                        float(rng.uniform(0.5, 2.0)))
        lam = float(rng.uniform(0.0, 2.0))
        hyps = [Hypothesis(w, fm) for w in W]
        sens_fn = SensitivityFunction.empirical(op, S_u, 1.0)
        analytic_fn = SensitivityFunction.analytic_upper(op, math.sqrt(2.0))
        sens = np.array([sens_fn(h) for h in hyps])
        analytic = np.array([analytic_fn(h) for h in hyps])
        approx = np.array([approx_error(op, h, S, loss) for h in hyps])
        emp = np.array([empirical_error(h, S, loss) for h in hyps])
        mismatches = []

        def check(name: str, out, idx: int, value: float):
            if not (np.array_equal(out.hypothesis.weights, W[idx]) and out.objective_value == value):
                mismatches.append(name)

        lo, hi = float(sens.min()), float(sens.max())
        t = (lo + hi) / 2.0 if hi > lo else hi + 1.0
        idx = _argmin(approx, sens < t)
        check("constrained_erm", constrained_erm(S, S_u, op, t, 1.0, loss, domain), idx, approx[idx])

        values = approx + loss.rho * sens
        idx = _argmin(values)
        check("sensitivity_regularized_erm", sensitivity_regularized_erm(S, op, sens_fn, loss, domain), idx,
              values[idx])

        values = approx + lam * sens
        idx = _argmin(values)
        check("lambda_erm", lambda_erm(S, S_u, op, lam, 1.0, loss, domain), idx, values[idx])

        values = approx + lam * analytic
        idx = _argmin(values)
        check("analytic_lambda_erm", analytic_lambda_erm(S, op, lam, analytic_fn, loss, domain), idx, values[idx])

        schedule = ThresholdSchedule((hi / 4.0, hi / 2.0, hi) if hi > 0 else (1.0,))
        estimator = make_grid_rad_estimator(W, sens, S, fm, n_sigma=200, seed=s)
        penalties = [2.0 * loss.rho * float(estimator(level + 0.0).value) + hoeffding_term(3.0, 1.0 / w, m)
                     for level, w in zip(schedule.thresholds, schedule.weights)]
        ks = [next((k for k, level in enumerate(schedule.thresholds) if d <= level), len(schedule) - 1)
              for d in sens]
        values = np.array([float(e) + penalties[k] for e, k in zip(emp, ks)])
        idx = _argmin(values)
        check("srm", srm_learner(S, S_u, op, schedule, 0.0, estimator, loss, domain), idx, values[idx])

        weights = [2.0 ** -(k + 1) for k in range(len(lambdas))]
        scores, picks = [], []
        for lam_k, w_k in zip(lambdas, weights):
            values = approx + lam_k * sens
            pick = _argmin(values)
            picks.append((pick, values[pick]))
            scores.append(approx[pick] + hoeffding_term(3.0, 1.0 / w_k, m))
        best = _argmin(np.array(scores))
        out, _ = lambda_grid_srm(S, S_u, op, lambdas, None, 1.0, loss, domain)
        check("lambda_grid_srm", out, picks[best][0], picks[best][1])
        if out.chosen_k != best + 1:
            mismatches.append("lambda_grid_srm_k")

        return TrialOutcome(bool(mismatches), 0.0 if not mismatches else -1.0,
                            {"mismatches": mismatches, "loss": loss.kind, "step": op.step})

    outcomes = _run_trials(trial, "learner_oracle", params["trials"], seed, threads)
    return _summarise("learner_oracle", "exhaustive_minimizer", params, outcomes, seed)


SUITES: Dict[str, Callable[..., CoverageReport]] = {
    "ellipse_exact": ellipse_exact,
    "union_exact": union_exact,
    "crude_sandwich": crude_sandwich,
    "cluster_dominance": cluster_dominance,
    "kernel_dominance": kernel_dominance,
    "stochastic_unbiased": stochastic_unbiased,
    "lemma1": lemma1,
    "prop10": prop10,
    "prop2": prop2,
    "prop3": prop3,
    "prop4": prop4,
    "learner_oracle": learner_oracle,
}


def run_suite(name: str, trials: Optional[int] = None, seed: int = 0, threads: int = 1,
              **overrides) -> CoverageReport:
    params = SuiteManager.get_suite(name, trials=trials, **overrides)
    if name not in SUITES:
        raise InvalidParameterError(f"Suite {name} has parameters but no runner", {"suite": name})
    logger.info("Running suite %s: %d trials, seed %d, %d threads", name, params["trials"], seed, threads)
    return SUITES[name](params, seed, threads)

"""Sensitivity-aware learning algorithms over a searchable weight domain.

Objectives containing Q(w) are piecewise constant, so search is exhaustive on
a grid (the default for small dimension) or seeded random/coordinate search.
Ties always go to the lowest index in enumeration order.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.bounds import hoeffding_term
from core.errors import InfeasibleError, InvalidParameterError
from core.model import (ApproxOperator, FeatureMap, Hypothesis, LabelledSample, LossSpec, SyntheticTask,
                        UnlabelledSample, apply_operator, empirical_error, predict_batch)
from core.rad_geometry import RadEstimate, mc_rademacher_matrix
from core.sensitivity import (SensitivityEstimate, analytic_sensitivity_upper, empirical_sensitivity,
                              true_sensitivity_mc)
from core.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

SEARCH_MODES = ("grid", "random", "coordinate_descent")
MAX_GRID_POINTS = 10 ** 6


@dataclass(frozen=True)
class SearchDomain:
    """Box [-half_width, half_width]^dim searched by grid, random draws or coordinate descent."""

    dim: int
    half_width: float = 1.0
    mode: str = "grid"
    points_per_axis: int = 21
    n_samples: int = 1000
    restarts: int = 4
    iterations: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SEARCH_MODES:
            raise InvalidParameterError(f"Unknown search mode: {self.mode}", {"allowed": list(SEARCH_MODES)})
        if not self.half_width > 0:
            raise InvalidParameterError("half_width must be positive")
        if self.dim < 1 or self.points_per_axis < 2:
            raise InvalidParameterError("dim must be >= 1 and points_per_axis >= 2")
        if self.mode == "grid" and self.points_per_axis ** self.dim > MAX_GRID_POINTS:
            raise InvalidParameterError(
                f"grid of {self.points_per_axis}^{self.dim} points exceeds {MAX_GRID_POINTS}",
                {"points": self.points_per_axis ** self.dim})

    @classmethod
    def default(cls, dim: int, half_width: float = 1.0, seed: int = 0) -> "SearchDomain":
        if dim <= 3:
            return cls(dim, half_width, "grid", seed=seed)
        return cls(dim, half_width, "coordinate_descent", seed=seed)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points_per_axis)

    def grid_points(self) -> np.ndarray:
        axes = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    def random_points(self) -> np.ndarray:
        rng = make_rng(self.seed, "random_points")
        return rng.uniform(-self.half_width, self.half_width, size=(self.n_samples, self.dim))

    def start_points(self) -> np.ndarray:
        rng = make_rng(self.seed, "restarts")
        return rng.choice(self.axis(), size=(self.restarts, self.dim))

    def candidates(self) -> np.ndarray:
        """Enumerated candidates for grid/random modes; restart points otherwise."""
        if self.mode == "grid":
            return self.grid_points()
        if self.mode == "random":
            return self.random_points()
        return self.start_points()

    def to_dict(self) -> Dict[str, Any]:
        return {"dim": self.dim, "half_width": self.half_width, "mode": self.mode,
                "points_per_axis": self.points_per_axis, "n_samples": self.n_samples,
                "restarts": self.restarts, "iterations": self.iterations, "seed": self.seed}


@dataclass(frozen=True)
class ThresholdSchedule:
    thresholds: Tuple[float, ...]
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        ts = tuple(float(t) for t in self.thresholds)
        if not ts:
            raise InvalidParameterError("threshold schedule must be nonempty")
        if ts[0] <= 0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidParameterError("thresholds must be positive and strictly increasing", {"thresholds": ts})
        ws = self.weights
        if ws is None:
            ws = tuple(2.0 ** -(k + 1) for k in range(len(ts)))
        ws = tuple(float(w) for w in ws)
        if len(ws) != len(ts) or any(w <= 0 for w in ws) or sum(ws) > 1 + 1e-12:
            raise InvalidParameterError("weights must be positive, one per threshold, summing to at most 1",
                                        {"weights": ws})
        object.__setattr__(self, "thresholds", ts)
        object.__setattr__(self, "weights", ws)

    def __len__(self) -> int:
        return len(self.thresholds)


@dataclass
class SearchResult:
    weights: np.ndarray
    value: float
    trace: List[float]
    index: Optional[int] = None


@dataclass
class LearnerOutput:
    algorithm: str
    hypothesis: Hypothesis
    approx_hypothesis: Hypothesis
    objective_value: float
    objective_trace: List[float]
    chosen_k: Optional[int] = None
    chosen_t: Optional[float] = None
    lam: Optional[float] = None
    feasible: bool = True
    sensitivity_variant: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "weights": self.hypothesis.weights.tolist(),
            "approx_weights": self.approx_hypothesis.weights.tolist(),
            "feature_map": self.hypothesis.feature_map.to_dict(),
            "objective_value": self.objective_value,
            "objective_trace": list(self.objective_trace),
            "chosen_k": self.chosen_k,
            "chosen_t": self.chosen_t,
            "lambda": self.lam,
            "feasible": self.feasible,
            "sensitivity_variant": self.sensitivity_variant,
            "metadata": self.metadata,
        }


def _evaluate(fn: Callable[[np.ndarray], Any], points: np.ndarray, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(fn, points))
    return [fn(w) for w in points]


def select_minimizer(values: np.ndarray, feasible: np.ndarray) -> int:
    """Lowest-index minimizer among feasible entries."""
    idx = np.flatnonzero(feasible)
    if idx.size == 0:
        raise InfeasibleError("no candidate satisfies the feasibility constraint")
    return int(idx[np.argmin(values[idx])])


def _improvement_trace(values: np.ndarray, feasible: np.ndarray) -> List[float]:
    trace: List[float] = []
    for v, ok in zip(values, feasible):
        if ok and (not trace or v < trace[-1]):
            trace.append(float(v))
    return trace


def optimize(objective: Callable[[np.ndarray], float], domain: SearchDomain,
             feasibility: Optional[Callable[[np.ndarray], bool]] = None, threads: int = 1) -> SearchResult:
    if domain.mode in ("grid", "random"):
        points = domain.candidates()
        values = np.array(_evaluate(objective, points, threads), dtype=float)
        feasible = (np.array(_evaluate(feasibility, points, threads), dtype=bool)
                    if feasibility is not None else np.ones(len(points), dtype=bool))
        best = select_minimizer(values, feasible)
        return SearchResult(points[best].copy(), float(values[best]), _improvement_trace(values, feasible), best)
    return _coordinate_descent(objective, domain, feasibility)


def _coordinate_descent(objective, domain: SearchDomain, feasibility) -> SearchResult:
    axis = domain.axis()

    def score(w):
        if feasibility is not None and not feasibility(w):
            return math.inf
        return float(objective(w))

    best_w, best_v, best_trace = None, math.inf, []
    for start in domain.start_points():
        w = start.copy()
        v = score(w)
        trace = [v] if math.isfinite(v) else []
        for _ in range(domain.iterations):
            improved = False
            for j in range(domain.dim):
                for value in axis:
                    if value == w[j]:
                        continue
                    trial = w.copy()
                    trial[j] = value
                    tv = score(trial)
                    if tv < v:
                        w, v, improved = trial, tv, True
                        trace.append(v)
            if not improved:
                break
        if v < best_v:
            best_w, best_v, best_trace = w, v, trace
    if best_w is None:
        raise InfeasibleError("coordinate descent found no feasible point")
    return SearchResult(best_w, best_v, best_trace)


class SensitivityFunction:
    """Named map f -> sensitivity value used inside regularized objectives."""

    VARIANTS = ("empirical", "monte_carlo_true", "analytic_upper")

    def __init__(self, variant: str, fn: Callable[[Hypothesis], SensitivityEstimate]):
        if variant not in self.VARIANTS:
            raise InvalidParameterError(f"Unknown sensitivity variant: {variant}", {"allowed": list(self.VARIANTS)})
        self.variant = variant
        self._fn = fn

    def __call__(self, h: Hypothesis) -> float:
        return self._fn(h).value

    @classmethod
    def empirical(cls, op: ApproxOperator, s: UnlabelledSample, p: float = 1.0) -> "SensitivityFunction":
        return cls("empirical", lambda h: empirical_sensitivity(h, op, s, p))

    @classmethod
    def monte_carlo_true(cls, op: ApproxOperator, task: SyntheticTask, p: float = 1.0, n_mc: int = 100000,
                         seed: int = 0) -> "SensitivityFunction":
        # one seed for every candidate: common random numbers across the search
        return cls("monte_carlo_true", lambda h: true_sensitivity_mc(h, op, task, p, n_mc, seed))

    @classmethod
    def analytic_upper(cls, op: ApproxOperator, input_norm_budget: float) -> "SensitivityFunction":
        return cls("analytic_upper", lambda h: analytic_sensitivity_upper(h, op, input_norm_budget))


def _feature_map(domain: SearchDomain, feature_map: Optional[FeatureMap]) -> FeatureMap:
    feature_map = feature_map or FeatureMap.identity(domain.dim)
    if feature_map.dim != domain.dim:
        raise InvalidParameterError(
            f"search domain has dimension {domain.dim}, feature map needs {feature_map.dim}")
    return feature_map


def _output(algorithm: str, result: SearchResult, op: ApproxOperator, feature_map: FeatureMap,
            **extra) -> LearnerOutput:
    h = Hypothesis(result.weights, feature_map)
    return LearnerOutput(algorithm, h, apply_operator(op, h), result.value, result.trace, **extra)


def approx_error(op: ApproxOperator, h: Hypothesis, labelled: LabelledSample, spec: LossSpec) -> float:
    """Empirical error of Af on the labelled sample."""
    return empirical_error(apply_operator(op, h), labelled, spec)


def constrained_erm(labelled: LabelledSample, unlabelled: Optional[UnlabelledSample], op: ApproxOperator, t: float,
                    p: float, spec: LossSpec, domain: SearchDomain, feature_map: Optional[FeatureMap] = None,
                    sensitivity_fn: Optional[SensitivityFunction] = None, strict: bool = True,
                    threads: int = 1) -> LearnerOutput:
    """argmin err_hat(Af) over {f : D(f) < t}; ``strict=False`` admits D(f) = t."""
    if not t > 0:
        raise InvalidParameterError("t must be positive", {"t": t})
    feature_map = _feature_map(domain, feature_map)
    if sensitivity_fn is None:
        if unlabelled is None:
            raise InvalidParameterError("constrained_erm needs an unlabelled sample or a sensitivity function")
        sensitivity_fn = SensitivityFunction.empirical(op, unlabelled, p)

    def objective(w):
        return approx_error(op, Hypothesis(w, feature_map), labelled, spec)

    def feasibility(w):
        d = sensitivity_fn(Hypothesis(w, feature_map))
        return d < t if strict else d <= t

    try:
        result = optimize(objective, domain, feasibility, threads)
    except InfeasibleError:
        sens = _evaluate(lambda w: sensitivity_fn(Hypothesis(w, feature_map)), domain.candidates(), threads)
        min_sens = float(min(sens))
        raise InfeasibleError(
            f"no hypothesis has sensitivity below t = {t!r}; minimum achievable is {min_sens!r}",
            {"t": t, "min_sensitivity": min_sens})
    logger.info("constrained_erm: t=%s objective=%.6g", t, result.value)
    return _output("constrained_erm", result, op, feature_map, chosen_t=t,
                   sensitivity_variant=sensitivity_fn.variant)


RadEstimator = Callable[[float], Union[RadEstimate, float]]


def make_grid_rad_estimator(candidates: np.ndarray, sensitivities: Sequence[float], labelled: LabelledSample,
                            feature_map: FeatureMap, n_sigma: int = 2000, seed: int = 0) -> RadEstimator:
    """MC complexity of {f in candidates : D_hat(f) <= threshold} restricted to the labelled inputs."""
    predictions = np.vstack([predict_batch(Hypothesis(w, feature_map), labelled.inputs) for w in candidates])
    sensitivities = np.asarray(sensitivities, dtype=float)
    cache: Dict[float, RadEstimate] = {}

    def estimator(threshold: float) -> RadEstimate:
        if threshold not in cache:
            rows = predictions[sensitivities <= threshold]
            if rows.shape[0] == 0:
                cache[threshold] = RadEstimate(0.0, "monte_carlo", labelled.m, n_sigma=n_sigma, seed=seed,
                                               std_error=0.0, metadata={"empty": True})
            else:
                cache[threshold] = mc_rademacher_matrix(rows, n_sigma, derive_seed(seed, repr(float(threshold))))
        return cache[threshold]

    return estimator


def srm_learner(labelled: LabelledSample, unlabelled: UnlabelledSample, op: ApproxOperator,
                schedule: ThresholdSchedule, epsilon_u: float, rad_estimator: Optional[RadEstimator],
                spec: LossSpec, domain: SearchDomain, p: float = 1.0, feature_map: Optional[FeatureMap] = None,
                n_sigma: int = 2000, threads: int = 1) -> LearnerOutput:
    """argmin err_hat(f) + 2 rho R(H_hat_{t_k(f) + eps_u}) + 3 sqrt(log(1/w_k(f)) / 2m).

    k(f) is the first k with D_hat(f) <= t_k + eps_u; candidates above the last
    threshold are assigned the last index.
    """
    feature_map = _feature_map(domain, feature_map)
    sensitivity_fn = SensitivityFunction.empirical(op, unlabelled, p)
    levels = [t + epsilon_u for t in schedule.thresholds]
    K = len(schedule)

    if rad_estimator is None:
        if domain.mode == "coordinate_descent":
            raise InvalidParameterError("the default SRM complexity estimator needs a grid or random domain")
        points = domain.candidates()
        sens = _evaluate(lambda w: sensitivity_fn(Hypothesis(w, feature_map)), points, threads)
        rad_estimator = make_grid_rad_estimator(points, sens, labelled, feature_map, n_sigma, domain.seed)

    penalties = []
    for level, w in zip(levels, schedule.weights):
        rad = rad_estimator(level)
        penalties.append(2.0 * spec.rho * float(getattr(rad, "value", rad)) + hoeffding_term(3.0, 1.0 / w, labelled.m))

    def assign_k(d: float) -> Tuple[int, bool, bool]:
        for k, level in enumerate(levels, start=1):
            if d <= level:
                return k, False, d == level
        return K, True, False

    boundary: List[int] = []

    def objective(w):
        h = Hypothesis(w, feature_map)
        k, _, hit = assign_k(sensitivity_fn(h))
        if hit:
            boundary.append(k)
        return empirical_error(h, labelled, spec) + penalties[k - 1]

    result = optimize(objective, domain, threads=threads)
    chosen_k, clamped, _ = assign_k(sensitivity_fn(Hypothesis(result.weights, feature_map)))
    if clamped:
        logger.warning("srm_learner: selected hypothesis exceeds the last threshold; assigned k=%d", K)
    boundary_hits = len(boundary)
    if boundary_hits:
        logger.info("srm_learner: %d candidates sat exactly on a threshold boundary", boundary_hits)
    return _output("srm", result, op, feature_map, chosen_k=chosen_k, chosen_t=schedule.thresholds[chosen_k - 1],
                   sensitivity_variant="empirical",
                   metadata={"clamped": clamped, "boundary_hits": boundary_hits, "epsilon_u": epsilon_u,
                             "penalties": penalties})


def sensitivity_regularized_erm(labelled: LabelledSample, op: ApproxOperator, sensitivity_fn: SensitivityFunction,
                                spec: LossSpec, domain: SearchDomain, rho: Optional[float] = None,
                                feature_map: Optional[FeatureMap] = None, threads: int = 1) -> LearnerOutput:
    """argmin err_hat(Af) + rho D(f), with D known, estimated or analytic."""
    feature_map = _feature_map(domain, feature_map)
    rho = spec.rho if rho is None else rho

    def objective(w):
        h = Hypothesis(w, feature_map)
        return approx_error(op, h, labelled, spec) + rho * sensitivity_fn(h)

    result = optimize(objective, domain, threads=threads)
    return _output("sensitivity_regularized_erm", result, op, feature_map, lam=rho,
                   sensitivity_variant=sensitivity_fn.variant)


def lambda_erm(labelled: LabelledSample, unlabelled: UnlabelledSample, op: ApproxOperator, lam: float, p: float,
               spec: LossSpec, domain: SearchDomain, feature_map: Optional[FeatureMap] = None,
               threads: int = 1) -> LearnerOutput:
    """argmin err_hat(Af) + lambda D_hat(f)."""
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative", {"lambda": lam})
    feature_map = _feature_map(domain, feature_map)
    sensitivity_fn = SensitivityFunction.empirical(op, unlabelled, p)

    def objective(w):
        h = Hypothesis(w, feature_map)
        return approx_error(op, h, labelled, spec) + lam * sensitivity_fn(h)

    result = optimize(objective, domain, threads=threads)
    return _output("lambda_erm", result, op, feature_map, lam=lam, sensitivity_variant="empirical")


def analytic_lambda_erm(labelled: LabelledSample, op: ApproxOperator, lam: float,
                        overline_fn: Union[SensitivityFunction, Callable[[Hypothesis], float]], spec: LossSpec,
                        domain: SearchDomain, feature_map: Optional[FeatureMap] = None,
                        threads: int = 1) -> LearnerOutput:
    """argmin err_hat(Af) + lambda * overline_D(f); needs no unlabelled data."""
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative", {"lambda": lam})
    feature_map = _feature_map(domain, feature_map)

    def objective(w):
        h = Hypothesis(w, feature_map)
        bound = overline_fn(h)
        return approx_error(op, h, labelled, spec) + lam * float(getattr(bound, "value", bound))

    result = optimize(objective, domain, threads=threads)
    return _output("analytic_lambda_erm", result, op, feature_map, lam=lam, sensitivity_variant="analytic_upper")


def lambda_grid_srm(labelled: LabelledSample, unlabelled: UnlabelledSample, op: ApproxOperator,
                    lambdas: Sequence[float], weights: Optional[Sequence[float]], p: float, spec: LossSpec,
                    domain: SearchDomain, feature_map: Optional[FeatureMap] = None,
                    threads: int = 1) -> Tuple[LearnerOutput, List[Dict[str, Any]]]:
    """Run lambda_erm per lambda_k; keep the one minimizing err_hat(Af) + 3 sqrt(log(1/w_k) / 2m)."""
    if len(lambdas) == 0:
        raise InvalidParameterError("lambda grid must be nonempty")
    if weights is None:
        weights = [2.0 ** -(k + 1) for k in range(len(lambdas))]
    if len(weights) != len(lambdas) or any(w <= 0 for w in weights) or sum(weights) > 1 + 1e-12:
        raise InvalidParameterError("weights must be positive, one per lambda, summing to at most 1")

    rows = []
    outputs = []
    for k, (lam, w) in enumerate(zip(lambdas, weights), start=1):
        out = lambda_erm(labelled, unlabelled, op, lam, p, spec, domain, feature_map, threads)
        err = empirical_error(out.approx_hypothesis, labelled, spec)
        penalty = hoeffding_term(3.0, 1.0 / w, labelled.m)
        rows.append({"k": k, "lambda": lam, "w_k": w, "approx_empirical_error": err,
                     "penalty": penalty, "score": err + penalty, "weights": out.hypothesis.weights.tolist()})
        outputs.append(out)

    best = min(range(len(rows)), key=lambda i: (rows[i]["score"], i))
    chosen = outputs[best]
    chosen.algorithm = "lambda_grid_srm"
    chosen.chosen_k = best + 1
    chosen.metadata["score"] = rows[best]["score"]
    logger.info("lambda_grid_srm: selected lambda=%s (k=%d)", lambdas[best], best + 1)
    return chosen, rows

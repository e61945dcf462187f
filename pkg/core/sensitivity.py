"""Approximation sensitivity D^p(f) = E[|f(x) - Af(x)|^p]^{1/p} and its estimates."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.bounds import hoeffding_term
from core.errors import DeterministicOperatorError, InvalidParameterError, StochasticOperatorError
from core.model import (MC_CHUNK, ApproxOperator, FeatureMap, Hypothesis, SyntheticTask, UnlabelledSample,
                        apply_operator, predict_batch, sample_inputs, summarize_draws)
from core.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

SENSITIVITY_KINDS = ("empirical", "monte_carlo_true", "analytic_upper", "expected_stochastic")
CAPACITY_FUNCTIONS = ("constant_one", "weight_norm")


@dataclass(frozen=True)
class SensitivityEstimate:
    p: float
    value: float
    kind: str
    provenance: str = ""
    std_error: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SENSITIVITY_KINDS:
            raise InvalidParameterError(f"Unknown sensitivity kind: {self.kind}")

    @property
    def certified(self) -> bool:
        return self.kind in ("empirical", "analytic_upper")

    def to_dict(self) -> Dict[str, Any]:
        out = {"p": self.p, "value": self.value, "kind": self.kind, "provenance": self.provenance}
        if self.std_error is not None:
            out.update({"std_error": self.std_error, "n": self.n})
        return out


@dataclass(frozen=True)
class DeviationBound:
    """epsilon_u with its itemized components."""

    epsilon_u: float
    components: Tuple[Tuple[str, float], ...]
    delta: float
    C: float
    m: int
    kind: str = "lemma"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon_u": self.epsilon_u,
            "components": [[label, value] for label, value in self.components],
            "delta": self.delta,
            "C": self.C,
            "m": self.m,
            "kind": self.kind,
        }


def _check_p(p: float):
    if not p >= 1:
        raise InvalidParameterError("p must be at least 1", {"p": p})


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise InvalidParameterError("delta must lie in (0, 1)", {"delta": delta})


def _power_mean(values: np.ndarray, p: float) -> float:
    if p == 1:
        return float(np.mean(values))
    return float(np.mean(np.power(values, p)) ** (1.0 / p))


def pointwise_sensitivity(h: Hypothesis, op: ApproxOperator, X, noise_seed: Optional[int] = None) -> np.ndarray:
    """|f(x) - Af(x)| for every row of X."""
    ah = apply_operator(op, h, noise_seed)
    return np.abs(predict_batch(h, X) - predict_batch(ah, X))


def empirical_sensitivity(h: Hypothesis, op: ApproxOperator, s: UnlabelledSample, p: float = 1.0) -> SensitivityEstimate:
    _check_p(p)
    if not op.deterministic:
        raise StochasticOperatorError()
    value = _power_mean(pointwise_sensitivity(h, op, s.inputs), p)
    return SensitivityEstimate(p, value, "empirical", provenance=s.source_id)


def true_sensitivity_mc(h: Hypothesis, op: ApproxOperator, task: SyntheticTask, p: float, n_mc: int,
                        seed: int) -> SensitivityEstimate:
    _check_p(p)
    if not op.deterministic:
        raise StochasticOperatorError()
    if n_mc < 1:
        raise InvalidParameterError("n_mc must be at least 1", {"n_mc": n_mc})
    ah = apply_operator(op, h)
    rng = make_rng(seed)
    chunks = []
    remaining = n_mc
    while remaining > 0:
        n = min(MC_CHUNK, remaining)
        X = sample_inputs(task, n, rng)
        chunks.append(np.power(np.abs(predict_batch(h, X) - predict_batch(ah, X)), p))
        remaining -= n
    moment = summarize_draws(np.concatenate(chunks))
    if p == 1:
        value, std_error = moment.value, moment.std_error
    else:
        value = moment.value ** (1.0 / p)
        # delta method for g(M) = M^{1/p}
        std_error = moment.std_error * value / (p * moment.value) if moment.value > 0 else 0.0
    return SensitivityEstimate(p, value, "monte_carlo_true", provenance=f"seed:{seed}", std_error=std_error, n=n_mc)


def sensitivity_deviation_bound(rad_of_sensitivity_class, C: float, m: int, delta: float) -> DeviationBound:
    """sup_f |D(f) - D_hat(f)| <= 2 R + 3 C sqrt(ln(2/delta) / 2m)."""
    rad = float(getattr(rad_of_sensitivity_class, "value", rad_of_sensitivity_class))
    if not C > 0:
        raise InvalidParameterError("C must be positive", {"C": C})
    if m < 1:
        raise InvalidParameterError("m must be at least 1", {"m": m})
    _check_delta(delta)
    components = (
        ("rademacher_term", 2.0 * rad),
        ("confidence_term", hoeffding_term(3.0 * C, 2.0 / delta, m)),
    )
    return DeviationBound(sum(v for _, v in components), components, delta, C, m, kind="lemma")


def unlabelled_epsilon_u(rad_of_sensitivity_class, C: float, m_u: int, delta: float) -> DeviationBound:
    """Deviation bound holding with probability 1 - delta/2, as the learners' guarantees require."""
    _check_delta(delta)
    bound = sensitivity_deviation_bound(rad_of_sensitivity_class, C, m_u, delta / 2.0)
    return DeviationBound(bound.epsilon_u, bound.components, delta, C, m_u, kind="unlabelled_half_delta")


def fast_rate_deviation_bound(rad, t: float, C: float, m: int, delta: float) -> DeviationBound:
    """6 R + t sqrt(2 ln(1/delta) / m) + 6 C ln(1/delta) / m, for classes with D^2 <= t."""
    rad = float(getattr(rad, "value", rad))
    if t < 0:
        raise InvalidParameterError("t must be nonnegative", {"t": t})
    if not C > 0:
        raise InvalidParameterError("C must be positive", {"C": C})
    if m < 1:
        raise InvalidParameterError("m must be at least 1", {"m": m})
    _check_delta(delta)
    log_term = math.log(1.0 / delta)
    components = (
        ("rademacher_term", 6.0 * rad),
        ("confidence_term", t * math.sqrt(2.0 * log_term / m)),
        ("fast_rate_term", 6.0 * C * log_term / m),
    )
    return DeviationBound(sum(v for _, v in components), components, delta, C, m, kind="fast_rate")


def analytic_sensitivity_upper(h: Hypothesis, op: ApproxOperator, input_norm_budget: float) -> SensitivityEstimate:
    """||w - Q(w)||_2 times a bound on the average feature norm (Cauchy-Schwarz)."""
    if not op.deterministic:
        raise StochasticOperatorError()
    if input_norm_budget < 0:
        raise InvalidParameterError("input_norm_budget must be nonnegative")
    residual = float(np.linalg.norm(h.weights - op.transform_weights(h.weights)))
    return SensitivityEstimate(1.0, residual * input_norm_budget, "analytic_upper",
                               provenance=f"budget:{input_norm_budget!r}")


def expected_sensitivity(h: Hypothesis, op: ApproxOperator, s: UnlabelledSample, p: float, n_omega: int,
                         seed: int, threads: int = 1) -> SensitivityEstimate:
    """Mean over operator draws omega of the empirical sensitivity of A_omega."""
    _check_p(p)
    if op.deterministic:
        raise DeterministicOperatorError()
    if n_omega < 1:
        raise InvalidParameterError("n_omega must be at least 1", {"n_omega": n_omega})

    def draw(i: int) -> float:
        return _power_mean(pointwise_sensitivity(h, op, s.inputs, derive_seed(seed, "omega", i)), p)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            values = list(executor.map(draw, range(n_omega)))
    else:
        values = [draw(i) for i in range(n_omega)]
    summary = summarize_draws(np.array(values))
    return SensitivityEstimate(p, summary.value, "expected_stochastic", provenance=f"seed:{seed}",
                               std_error=summary.std_error, n=n_omega)


@dataclass(frozen=True)
class VarianceConditionRow:
    index: int
    lhs: float
    std_error: float
    capacity: float
    threshold: float
    holds: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "lhs": self.lhs, "std_error": self.std_error,
                "capacity": self.capacity, "threshold": self.threshold, "holds": self.holds}


def variance_condition_check(op: ApproxOperator, hypotheses: Sequence[Hypothesis], s: UnlabelledSample,
                             alpha: float, capacity_fn: str = "constant_one", n_omega: int = 1000,
                             seed: int = 0) -> List[VarianceConditionRow]:
    """Estimate E_omega ||A_omega f - f||^2 on the sample against (alpha C(f))^2.

    A deterministic operator is treated as a singleton Omega.
    """
    if capacity_fn not in CAPACITY_FUNCTIONS:
        raise InvalidParameterError(f"Unknown capacity function: {capacity_fn}", {"allowed": list(CAPACITY_FUNCTIONS)})
    if alpha < 0:
        raise InvalidParameterError("alpha must be nonnegative")
    rows = []
    for i, h in enumerate(hypotheses):
        if op.deterministic:
            lhs, std_error = float(np.mean(np.square(pointwise_sensitivity(h, op, s.inputs)))), 0.0
        else:
            draws = np.array([
                np.mean(np.square(pointwise_sensitivity(h, op, s.inputs, derive_seed(seed, "variance", i, j))))
                for j in range(n_omega)
            ])
            summary = summarize_draws(draws)
            lhs, std_error = summary.value, summary.std_error
        capacity = 1.0 if capacity_fn == "constant_one" else float(np.linalg.norm(h.weights))
        threshold = (alpha * capacity) ** 2
        rows.append(VarianceConditionRow(i, lhs, std_error, capacity, threshold, bool(lhs <= threshold)))
    return rows


def uniform_sensitivity_constant(weight_rows, op: ApproxOperator, X, feature_map: Optional[FeatureMap] = None) -> float:
    """C = sup_w ||w - Q(w)||_2 * max_x ||Phi(x)||_2 over a search domain and inputs."""
    if not op.deterministic:
        raise StochasticOperatorError()
    W = np.atleast_2d(np.asarray(weight_rows, dtype=float))
    X = np.asarray(X, dtype=float)
    feature_map = feature_map or FeatureMap.identity(X.shape[1])
    residual = max(float(np.linalg.norm(w - op.transform_weights(w))) for w in W)
    feature_norm = float(np.sqrt(np.max(feature_map.gram_diagonal(X))))
    return residual * feature_norm

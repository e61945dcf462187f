"""Itemized right-hand sides of the generalization guarantees.

Callers supply every constituent (errors, complexities, epsilon_u); this
module only does arithmetic. A constituent may be a bare float, a RadEstimate,
a SensitivityEstimate or a MonteCarloEstimate; anything exposing
``certified = False`` marks the report as uncertified.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from core.errors import InvalidParameterError, MissingConstituentError, ReportIntegrityError
from core.utils import inputs_digest

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12


def hoeffding_term(c: float, arg: float, m: int) -> float:
    """c * sqrt(ln(arg) / (2m))."""
    if arg < 1:
        raise InvalidParameterError("log argument must be at least 1", {"arg": arg})
    if m < 1:
        raise InvalidParameterError("m must be at least 1", {"m": m})
    return c * math.sqrt(math.log(arg) / (2.0 * m))


@dataclass(frozen=True)
class ConfidenceTerm:
    c: float
    arg: float
    m: int

    @property
    def value(self) -> float:
        return hoeffding_term(self.c, self.arg, self.m)


@dataclass(frozen=True)
class BoundReport:
    name: str
    value: float
    terms: Tuple[Tuple[str, float], ...]
    delta: float
    inputs_digest: str
    certified: bool
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidParameterError("delta must lie in (0, 1)", {"delta": self.delta})
        total = sum(v for _, v in self.terms)
        if abs(total - self.value) > SUM_TOLERANCE:
            raise ReportIntegrityError(
                f"report {self.name!r} terms sum to {total!r}, not {self.value!r}",
                {"name": self.name, "terms_sum": total, "value": self.value})

    def term(self, label: str) -> float:
        for name, value in self.terms:
            if name == label:
                return value
        raise KeyError(label)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "name": self.name,
            "value": self.value,
            "terms": [[label, value] for label, value in self.terms],
            "delta": self.delta,
            "certified": self.certified,
            "inputs_digest": self.inputs_digest,
        }
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoundReport":
        """Load a serialized report; the terms-sum check runs on construction."""
        try:
            return cls(
                name=data["name"],
                value=float(data["value"]),
                terms=tuple((str(label), float(value)) for label, value in data["terms"]),
                delta=float(data["delta"]),
                inputs_digest=data["inputs_digest"],
                certified=bool(data["certified"]),
                metadata=dict(data.get("metadata", {})),
            )
        except KeyError as e:
            raise ReportIntegrityError(f"report is missing field {e.args[0]!r}", {"field": e.args[0]})


Constituent = Union[float, Any]


def _value(x: Constituent) -> float:
    return float(getattr(x, "value", x))


def _record(x: Constituent) -> Any:
    if x is None:
        return None
    if hasattr(x, "to_dict"):
        return x.to_dict()
    if isinstance(x, (list, tuple)):
        return [_record(v) for v in x]
    return float(x)


def _is_certified(*constituents: Constituent) -> bool:
    return all(bool(getattr(c, "certified", True)) for c in constituents if c is not None)


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise InvalidParameterError("delta must lie in (0, 1)", {"delta": delta})


def _check_nonnegative(**values: float):
    for name, value in values.items():
        if value < 0:
            raise InvalidParameterError(f"{name} must be nonnegative", {name: value})


def _report(name: str, terms: List[Tuple[str, float]], delta: float, inputs: Dict[str, Any],
            constituents: Sequence[Constituent], metadata: Optional[Dict[str, Any]] = None) -> BoundReport:
    value = sum(v for _, v in terms)
    digest = inputs_digest({"name": name, "delta": delta, **{k: _record(v) for k, v in inputs.items()}})
    return BoundReport(name, value, tuple(terms), delta, digest, _is_certified(*constituents), dict(metadata or {}))


def uniform_restricted_bound(emp_err: Constituent, rad_Ht: Constituent, rho: float, m: int,
                             delta: float) -> BoundReport:
    """err(f) <= err_hat(f) + 2 rho R(H_t) + 3 sqrt(log(2/delta) / 2m)."""
    _check_delta(delta)
    _check_nonnegative(emp_err=_value(emp_err), rad_Ht=_value(rad_Ht), rho=rho)
    terms = [
        ("empirical_error", _value(emp_err)),
        ("rademacher", 2.0 * rho * _value(rad_Ht)),
        ("confidence", hoeffding_term(3.0, 2.0 / delta, m)),
    ]
    return _report("uniform_restricted", terms, delta,
                   {"emp_err": emp_err, "rad_Ht": rad_Ht, "rho": rho, "m": m}, [emp_err, rad_Ht])


def restricted_erm_guarantee(err_star_t: Constituent, rad_Ht: Constituent, rho: float, m: int,
                             delta: float) -> BoundReport:
    """Guarantee of ERM inside H_t: err(f_t*) + 2 rho R(H_t) + 4 sqrt(log(3/delta) / 2m)."""
    _check_delta(delta)
    _check_nonnegative(err_star_t=_value(err_star_t), rad_Ht=_value(rad_Ht), rho=rho)
    terms = [
        ("err_f_star", _value(err_star_t)),
        ("rademacher", 2.0 * rho * _value(rad_Ht)),
        ("confidence", hoeffding_term(4.0, 3.0 / delta, m)),
    ]
    return _report("restricted_erm", terms, delta,
                   {"err_star_t": err_star_t, "rad_Ht": rad_Ht, "rho": rho, "m": m}, [err_star_t, rad_Ht])


def srm_uniform_bound(emp_err: Constituent, rad_Ht_k: Constituent, w_k: float, rho: float, m: int,
                      delta: float) -> BoundReport:
    _check_delta(delta)
    if not 0 < w_k <= 1:
        raise InvalidParameterError("w_k must lie in (0, 1]", {"w_k": w_k})
    terms = [
        ("empirical_error", _value(emp_err)),
        ("rademacher", 2.0 * rho * _value(rad_Ht_k)),
        ("weight", hoeffding_term(3.0, 1.0 / w_k, m)),
        ("confidence", hoeffding_term(3.0, 4.0 / delta, m)),
    ]
    return _report("srm_uniform", terms, delta,
                   {"emp_err": emp_err, "rad_Ht_k": rad_Ht_k, "w_k": w_k, "rho": rho, "m": m},
                   [emp_err, rad_Ht_k])


def joint_bounds(err_terms: Dict[str, Constituent], rad_HA: Constituent, rho: float, t: float, m: int,
                 delta: float) -> Dict[str, BoundReport]:
    """The simultaneous guarantees of constrained ERM at threshold t.

    ``err_terms`` must hold ``err_f_star``; ``err_af_star`` and/or ``err_g_star``
    add the comparison against the approximated class.
    """
    _check_delta(delta)
    if t < 0:
        raise InvalidParameterError("t must be nonnegative", {"t": t})
    if "err_f_star" not in err_terms:
        raise MissingConstituentError("joint bounds need err_f_star", {"missing": "err_f_star"})
    err_f = err_terms["err_f_star"]
    rad_term = 2.0 * rho * _value(rad_HA)
    confidence = hoeffding_term(4.0, 9.0 / delta, m)
    inputs = {"rad_HA": rad_HA, "rho": rho, "t": t, "m": m, **err_terms}

    reports = {
        "af_bound": _report("prop2_af", [
            ("err_f_star", _value(err_f)),
            ("deployment", rho * t),
            ("rademacher", rad_term),
            ("confidence", confidence),
        ], delta, inputs, [err_f, rad_HA]),
        "f_bound": _report("prop2_f", [
            ("err_f_star", _value(err_f)),
            ("sensitivity_threshold", 2.0 * rho * t),
            ("rademacher", rad_term),
            ("confidence", confidence),
        ], delta, inputs, [err_f, rad_HA]),
    }
    comparators = [err_terms[k] for k in ("err_af_star", "err_g_star") if err_terms.get(k) is not None]
    if comparators:
        reports["af_ag_bound"] = _report("prop2_af_ag", [
            ("min_err_af_g", min(_value(c) for c in comparators)),
            ("rademacher", rad_term),
            ("confidence", confidence),
        ], delta, inputs, [*comparators, rad_HA])
    return reports


def regularized_bound(err_star_t, rho: float, t, rad_HA: Constituent, m: int, delta: float,
                      epsilon_u: Optional[Constituent] = None) -> BoundReport:
    """inf_t {err(f_t*) + 2 rho t} + 2 rho R(H_A) + confidence (+ rho epsilon_u).

    ``err_star_t`` and ``t`` may be scalars or equal-length sequences; the
    infimum runs over the supplied grid. Passing ``epsilon_u`` selects the
    estimated-sensitivity form with its wider confidence term.
    """
    _check_delta(delta)
    errs = list(err_star_t) if isinstance(err_star_t, (list, tuple)) else [err_star_t]
    ts = list(t) if isinstance(t, (list, tuple)) else [t]
    if len(errs) != len(ts) or not errs:
        raise InvalidParameterError("err_star_t and t must be nonempty and of equal length")
    inner = [_value(e) + 2.0 * rho * ti for e, ti in zip(errs, ts)]
    best = min(range(len(inner)), key=lambda i: (inner[i], i))

    terms = [
        ("err_f_star", _value(errs[best])),
        ("sensitivity_threshold", 2.0 * rho * ts[best]),
        ("rademacher", 2.0 * rho * _value(rad_HA)),
    ]
    if epsilon_u is None:
        name = "prop3"
        terms.append(("confidence", hoeffding_term(4.0, 8.0 / delta, m)))
    else:
        name = "cor1"
        terms.append(("confidence", hoeffding_term(4.0 + rho, 16.0 / delta, m)))
        terms.append(("epsilon_u", rho * _value(epsilon_u)))
    return _report(name, terms, delta,
                   {"err_star_t": errs, "t": ts, "rho": rho, "rad_HA": rad_HA, "m": m, "epsilon_u": epsilon_u},
                   [*errs, rad_HA, epsilon_u], metadata={"argmin_t": ts[best], "argmin_index": best})


def lambda_equivalence_bound(rho: float, rad_HA: Constituent, m: int, delta: float, lam: float,
                             epsilon_u: Optional[Constituent] = None, w_k: Optional[float] = None) -> BoundReport:
    """err(A f_lambda) - err(A f_t) <= 4 rho R(H_A) + 6 sqrt(ln(8/delta) / 2m) + 2 lambda epsilon_u.

    Without ``epsilon_u`` this is the analytic-sensitivity form; ``w_k`` adds
    the lambda-grid selection term 3 sqrt(log(1/w_k) / 2m).
    """
    _check_delta(delta)
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative", {"lambda": lam})
    terms = [
        ("rademacher", 4.0 * rho * _value(rad_HA)),
        ("confidence", hoeffding_term(6.0, 8.0 / delta, m)),
    ]
    name = "prop5"
    if epsilon_u is not None:
        name = "prop4"
        terms.append(("epsilon_u", 2.0 * lam * _value(epsilon_u)))
    if w_k is not None:
        if not 0 < w_k <= 1:
            raise InvalidParameterError("w_k must lie in (0, 1]", {"w_k": w_k})
        terms.append(("lambda_grid", hoeffding_term(3.0, 1.0 / w_k, m)))
    return _report(name, terms, delta,
                   {"rho": rho, "rad_HA": rad_HA, "m": m, "lambda": lam, "epsilon_u": epsilon_u, "w_k": w_k},
                   [rad_HA, epsilon_u])


def stochastic_bound(exp_emp_err: Constituent, exp_sensitivity: Constituent, exp_rad: Constituent, rho: float,
                     m: int, delta: float) -> BoundReport:
    """Expected-over-omega guarantee of a stochastic operator."""
    _check_delta(delta)
    terms = [
        ("expected_empirical_error", _value(exp_emp_err)),
        ("expected_sensitivity", rho * _value(exp_sensitivity)),
        ("expected_rademacher", 2.0 * rho * _value(exp_rad)),
        ("confidence", hoeffding_term(1.0, 1.0 / delta, m)),
    ]
    return _report("stochastic", terms, delta,
                   {"exp_emp_err": exp_emp_err, "exp_sensitivity": exp_sensitivity, "exp_rad": exp_rad,
                    "rho": rho, "m": m},
                   [exp_emp_err, exp_sensitivity, exp_rad])


def stochastic_fixed_omega_bound(emp_err_omega: Constituent, sensitivity_omega: Constituent,
                                 rad_omega: Constituent, rho: float, m: int, delta: float) -> BoundReport:
    """Per-omega guarantee err(f) <= err_hat(A_w f) + rho D_w(f) + 2 rho R(H_w) + 3 sqrt(ln(2/delta) / 2m)."""
    _check_delta(delta)
    terms = [
        ("expected_empirical_error", _value(emp_err_omega)),
        ("expected_sensitivity", rho * _value(sensitivity_omega)),
        ("expected_rademacher", 2.0 * rho * _value(rad_omega)),
        ("confidence", hoeffding_term(3.0, 2.0 / delta, m)),
    ]
    return _report("stochastic_fixed_omega", terms, delta,
                   {"emp_err_omega": emp_err_omega, "sensitivity_omega": sensitivity_omega,
                    "rad_omega": rad_omega, "rho": rho, "m": m},
                   [emp_err_omega, sensitivity_omega, rad_omega])


def balcan_guarantee_bound(err_star_k: Sequence[Constituent], rad_Ht_k: Sequence[Constituent],
                           w_k: Sequence[float], rho: float, m: int, delta: float) -> BoundReport:
    """inf_k {err(f_k*) + 2 rho R_k + 3 sqrt(log(1/w_k) / 2m)} + 4 sqrt(log(6/delta) / 2m)."""
    _check_delta(delta)
    if not (len(err_star_k) == len(rad_Ht_k) == len(w_k)) or len(w_k) == 0:
        raise InvalidParameterError("per-threshold lists must be nonempty and of equal length")
    inner = [
        _value(e) + 2.0 * rho * _value(r) + hoeffding_term(3.0, 1.0 / w, m)
        for e, r, w in zip(err_star_k, rad_Ht_k, w_k)
    ]
    k = min(range(len(inner)), key=lambda i: (inner[i], i))
    terms = [
        ("err_f_star", _value(err_star_k[k])),
        ("rademacher", 2.0 * rho * _value(rad_Ht_k[k])),
        ("weight", hoeffding_term(3.0, 1.0 / w_k[k], m)),
        ("confidence", hoeffding_term(4.0, 6.0 / delta, m)),
    ]
    return _report("srm_guarantee", terms, delta,
                   {"err_star_k": list(err_star_k), "rad_Ht_k": list(rad_Ht_k), "w_k": list(w_k), "rho": rho, "m": m},
                   [*err_star_k, *rad_Ht_k], metadata={"argmin_k": k + 1})


def deployment_penalty_bound(err_f: Constituent, rho: float, sensitivity: Constituent) -> float:
    """err(Af) <= err(f) + rho D^1(f)."""
    return _value(err_f) + rho * _value(sensitivity)

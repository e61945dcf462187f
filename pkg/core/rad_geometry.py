"""Rademacher complexities of sensitivity sets.

Conventions: R(T) = (1/m) E_sigma sup_{v in T} <sigma, v>, without an absolute
value, for a set T of m-vectors. Oracles enumerate or sample sign patterns;
closed forms cover p-ellipses and their unions; rotated and clustered unions
get certified over-estimates.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np
from scipy.optimize import minimize

from core.errors import (ConfigError, DimensionMismatchError, EnumerationLimitError,
                         InvalidParameterError, StochasticOperatorError)
from core.model import ApproxOperator, Hypothesis, UnlabelledSample, summarize_draws
from core.sensitivity import pointwise_sensitivity
from core.utils import make_rng

logger = logging.getLogger(__name__)

MAX_EXACT_M = 22
PATTERN_CHUNK = 1 << 15
SIGMA_CHUNK = 1 << 14
ORTHOGONALITY_TOL = 1e-10

EXACT_ENUMERATION = "exact_enumeration"
MONTE_CARLO = "monte_carlo"
CLOSED_FORM = "closed_form"
CERTIFIED_UPPER = "certified_upper"
CERTIFIED_METHODS = (EXACT_ENUMERATION, CLOSED_FORM, CERTIFIED_UPPER)

GEOMETRY_SCHEMA_PATH = os.path.join(os.path.dirname(__file__), '..', 'data', 'schema', 'geometry_schema.json')

SupportFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RadEstimate:
    value: float
    method: str
    m: int
    n_sigma: Optional[int] = None
    seed: Optional[int] = None
    std_error: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method == EXACT_ENUMERATION and self.m > MAX_EXACT_M:
            raise EnumerationLimitError(f"exact enumeration requires m <= {MAX_EXACT_M}", {"m": self.m})

    @property
    def certified(self) -> bool:
        return self.method in CERTIFIED_METHODS

    def to_dict(self) -> Dict[str, Any]:
        out = {"value": self.value, "method": self.method, "m": self.m, "certified": self.certified}
        if self.method == MONTE_CARLO:
            out.update({"n_sigma": self.n_sigma, "seed": self.seed, "std_error": self.std_error})
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RadEstimate":
        return cls(
            value=float(data["value"]),
            method=data["method"],
            m=int(data["m"]),
            n_sigma=data.get("n_sigma"),
            seed=data.get("seed"),
            std_error=data.get("std_error"),
            metadata=dict(data.get("metadata", {})),
        )


@dataclass(frozen=True, eq=False)
class SensitivityPointSet:
    """Rows are (|f_i(x_k) - Af_i(x_k)|)_k for each hypothesis f_i."""

    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise DimensionMismatchError(f"point set must be a nonempty matrix, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidParameterError("point set entries must be finite")
        if np.any(points < 0):
            raise InvalidParameterError("sensitivity points must be nonnegative")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]


def sensitivity_pointset(hypotheses: Sequence[Hypothesis], op: ApproxOperator, s: UnlabelledSample) -> SensitivityPointSet:
    if not op.deterministic:
        raise StochasticOperatorError()
    if len(hypotheses) == 0:
        raise InvalidParameterError("sensitivity_pointset needs at least one hypothesis")
    return SensitivityPointSet(np.vstack([pointwise_sensitivity(h, op, s.inputs) for h in hypotheses]))


def conjugate_exponent(p: float) -> float:
    if p < 1:
        raise InvalidParameterError("p must be at least 1", {"p": p})
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def row_norms(A: np.ndarray, q: float) -> np.ndarray:
    A = np.abs(np.asarray(A, dtype=float))
    if math.isinf(q):
        return A.max(axis=-1)
    if q == 1:
        return A.sum(axis=-1)
    return np.power(np.power(A, q).sum(axis=-1), 1.0 / q)


def conjugate_norm(v, p: float) -> float:
    """||v||_{p'} with 1/p + 1/p' = 1 (max norm when p = 1)."""
    return float(row_norms(np.asarray(v, dtype=float), conjugate_exponent(p)))


def _check_enumerable(m: int):
    if m > MAX_EXACT_M:
        raise EnumerationLimitError(
            f"exact enumeration is capped at m = {MAX_EXACT_M} (got m = {m}); use the Monte Carlo estimator",
            {"m": m, "max_m": MAX_EXACT_M, "suggestion": "monte_carlo"})
    if m < 1:
        raise InvalidParameterError("m must be at least 1")


def sign_pattern_block(m: int, start: int, stop: int) -> np.ndarray:
    """Sign patterns start..stop-1 in binary order; bit k set means sigma_k = -1."""
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, np.newaxis] >> np.arange(m, dtype=np.int64)) & 1
    return 1.0 - 2.0 * bits


def exact_rademacher_support(support_fn: SupportFn, m: int) -> RadEstimate:
    """Average ``support_fn`` (sup over the set, per sign pattern) over all 2^m patterns."""
    _check_enumerable(m)
    total_patterns = 1 << m
    chunk_sums = []
    for start in range(0, total_patterns, PATTERN_CHUNK):
        sigma = sign_pattern_block(m, start, min(start + PATTERN_CHUNK, total_patterns))
        chunk_sums.append(float(np.sum(support_fn(sigma))))
    value = math.fsum(chunk_sums) / total_patterns / m
    return RadEstimate(max(value, 0.0), EXACT_ENUMERATION, m)


def _matrix_support(M: np.ndarray, absolute: bool) -> SupportFn:
    def support(sigma: np.ndarray) -> np.ndarray:
        corr = sigma @ M.T
        if absolute:
            corr = np.abs(corr)
        return corr.max(axis=1)
    return support


def exact_rademacher_matrix(M, absolute: bool = False) -> RadEstimate:
    """Exact complexity of the finite set of rows of M (entries of any sign)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1:
        raise DimensionMismatchError(f"expected a nonempty matrix, got shape {M.shape}")
    est = exact_rademacher_support(_matrix_support(M, absolute), M.shape[1])
    if absolute:
        return RadEstimate(est.value, est.method, est.m, metadata={"convention": "absolute"})
    return est


def mc_rademacher_matrix(M, n_sigma: int, seed: int, absolute: bool = False) -> RadEstimate:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1:
        raise DimensionMismatchError(f"expected a nonempty matrix, got shape {M.shape}")
    return mc_rademacher_support(_matrix_support(M, absolute), M.shape[1], n_sigma, seed,
                                 metadata={"convention": "absolute"} if absolute else None)


def mc_rademacher_support(support_fn: SupportFn, m: int, n_sigma: int, seed: int,
                          metadata: Optional[Dict[str, Any]] = None) -> RadEstimate:
    if n_sigma < 1:
        raise InvalidParameterError("n_sigma must be at least 1", {"n_sigma": n_sigma})
    rng = make_rng(seed)
    values = []
    remaining = n_sigma
    while remaining > 0:
        n = min(SIGMA_CHUNK, remaining)
        sigma = rng.choice([-1.0, 1.0], size=(n, m))
        values.append(np.asarray(support_fn(sigma), dtype=float))
        remaining -= n
    summary = summarize_draws(np.concatenate(values))
    return RadEstimate(summary.value / m, MONTE_CARLO, m, n_sigma=n_sigma, seed=seed,
                       std_error=summary.std_error / m, metadata=dict(metadata or {}))


def exact_rademacher_pointset(ps: SensitivityPointSet, absolute: bool = False) -> RadEstimate:
    """Exact enumeration over all sign patterns; ``absolute`` takes sup |<sigma, row>|."""
    return exact_rademacher_matrix(ps.points, absolute=absolute)


def mc_rademacher_pointset(ps: SensitivityPointSet, n_sigma: int, seed: int, absolute: bool = False) -> RadEstimate:
    return mc_rademacher_matrix(ps.points, n_sigma, seed, absolute=absolute)


def _check_mu(mu, m: Optional[int] = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1:
        raise DimensionMismatchError("semi-axes must be a vector")
    if m is not None and mu.shape[0] != m:
        raise DimensionMismatchError(f"semi-axes have length {mu.shape[0]}, expected m = {m}")
    if not np.all(mu > 0):
        raise InvalidParameterError("every semi-axis must be positive", {"mu": mu.tolist()})
    return mu


def _check_orthogonal(V, m: int) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.shape != (m, m):
        raise DimensionMismatchError(f"rotation must be {m}x{m}, got {V.shape}")
    if np.max(np.abs(V.T @ V - np.eye(m))) > ORTHOGONALITY_TOL:
        raise InvalidParameterError("rotation matrix is not orthogonal")
    return V


def ellipse_support(mu, p: float) -> SupportFn:
    """sup over E_p(mu) of <sigma, x> is ||sigma * mu||_{p'}."""
    mu = _check_mu(mu)
    q = conjugate_exponent(p)
    return lambda sigma: row_norms(sigma * mu, q)


def rotated_ellipse_support(V, mu, p: float) -> SupportFn:
    mu = _check_mu(mu)
    V = _check_orthogonal(V, mu.shape[0])
    q = conjugate_exponent(p)
    return lambda sigma: row_norms((sigma @ V) * mu, q)


def union_support(mus: Sequence, p: float) -> SupportFn:
    supports = [ellipse_support(mu, p) for mu in mus]
    return lambda sigma: np.max(np.vstack([s(sigma) for s in supports]), axis=0)


def ellipse_rademacher(mu, p: float, m: int) -> RadEstimate:
    mu = _check_mu(mu, m)
    return RadEstimate(conjugate_norm(mu, p) / m, CLOSED_FORM, m, metadata={"p": p})


def union_ellipse_bound(mus: Sequence, p: float, m: int) -> RadEstimate:
    if len(mus) == 0:
        raise InvalidParameterError("union of ellipses needs at least one component")
    values = [ellipse_rademacher(mu, p, m).value for mu in mus]
    best = int(np.argmax(values))
    return RadEstimate(values[best], CLOSED_FORM, m,
                       metadata={"p": p, "components": len(values), "argmax_component": best})


def _rotated_norm(V: np.ndarray, mu: np.ndarray, p: float) -> Tuple[float, bool]:
    """(value, exact) for ||V diag(mu)||_{p->1} or its certified over-estimate."""
    m = mu.shape[0]
    if np.array_equal(V, np.eye(m)):
        return conjugate_norm(mu, p), True
    weighted = mu * np.abs(V).sum(axis=0)
    if p == 1:
        return float(weighted.max()), True
    return conjugate_norm(weighted, p), False


def rotated_union_bound(components: Sequence[Tuple[Any, Any]], p: float, m: int) -> RadEstimate:
    if len(components) == 0:
        raise InvalidParameterError("rotated union needs at least one component")
    norms = []
    exact = True
    for V, mu in components:
        mu = _check_mu(mu, m)
        V = _check_orthogonal(V, m)
        value, is_exact = _rotated_norm(V, mu, p)
        norms.append(value)
        exact = exact and is_exact
    best = int(np.argmax(norms))
    return RadEstimate(norms[best] / m, CLOSED_FORM if exact else CERTIFIED_UPPER, m,
                       metadata={"p": p, "components": len(norms), "argmax_component": best, "exact": exact})


def operator_norm_lower_estimate(V, mu, p: float, n_starts: int = 8, seed: int = 0) -> float:
    """Diagnostic lower estimate of ||V diag(mu)||_{p->1} by multi-start ascent.

    Every value returned is attained by a feasible direction, so it never
    exceeds the true operator norm. Not used in any bound.
    """
    mu = _check_mu(mu)
    m = mu.shape[0]
    V = _check_orthogonal(V, m)
    M = V * mu
    q = conjugate_exponent(p)

    def normalise(u):
        norm = float(np.linalg.norm(u, ord=p)) if not math.isinf(p) else float(np.max(np.abs(u)))
        return u / norm if norm > 0 else None

    def value(u):
        u = normalise(u)
        return 0.0 if u is None else float(np.abs(M @ u).sum())

    def refine(u):
        # fixed-point iteration on the sign pattern of M u
        best = value(u)
        for _ in range(50):
            s = np.sign(M @ u)
            s[s == 0] = 1.0
            a = M.T @ s
            if math.isinf(q):
                u_next = np.zeros(m)
                u_next[int(np.argmax(np.abs(a)))] = np.sign(a[int(np.argmax(np.abs(a)))]) or 1.0
            elif q == 1:
                u_next = np.sign(a)
            else:
                u_next = np.sign(a) * np.power(np.abs(a), q - 1.0)
            candidate = value(u_next)
            if candidate <= best + 1e-15:
                break
            u, best = u_next, candidate
        return best

    rng = make_rng(seed)
    best = max(value(np.eye(m)[k]) for k in range(m))
    for _ in range(n_starts):
        u0 = rng.normal(size=m)
        res = minimize(lambda u: -value(u), u0, method="Nelder-Mead",
                       options={"maxiter": 200 * m, "xatol": 1e-10, "fatol": 1e-12})
        best = max(best, value(res.x), refine(res.x))
    return best


def cluster_bound(components: Sequence[Tuple[Any, Any, Any]], p: float, m: int) -> RadEstimate:
    if len(components) == 0:
        raise InvalidParameterError("clustered model needs at least one component")
    rotated = rotated_union_bound([(V, mu) for _, V, mu in components], p, m)
    centers = np.vstack([np.asarray(c, dtype=float) for c, _, _ in components])
    if centers.shape[1] != m:
        raise DimensionMismatchError(f"cluster centers must have length m = {m}")
    massart = massart_bound(centers)
    return RadEstimate(rotated.value + massart, CERTIFIED_UPPER, m,
                       metadata={"p": p, "rotated_union_term": rotated.value, "massart_term": massart,
                                 "components": len(components)})


def crude_bounds(R_p: float, p: float) -> Tuple[float, float]:
    """(lower, upper) magnitude sandwich for a set filling the positive p-ball."""
    if R_p < 0:
        raise InvalidParameterError("R_p must be nonnegative", {"R_p": R_p})
    if p < 1:
        raise InvalidParameterError("p must be at least 1", {"p": p})
    return R_p / (2.0 * 2.0 ** (1.0 / p)), float(R_p)


def positive_orthant_ball_sup(sigma, radius: float, p: float):
    """Support function of B_p^+(0, radius): radius * ||max(sigma, 0)||_{p'}.

    Accepts a single sign vector or a block of them (one per row).
    """
    if radius < 0:
        raise InvalidParameterError("radius must be nonnegative")
    sigma = np.asarray(sigma, dtype=float)
    values = radius * row_norms(np.maximum(sigma, 0.0), conjugate_exponent(p))
    return float(values) if sigma.ndim == 1 else values


def massart_bound(point_rows) -> float:
    rows = np.atleast_2d(np.asarray(point_rows, dtype=float))
    n, m = rows.shape
    if n < 1:
        raise InvalidParameterError("massart_bound needs at least one vector")
    return float(np.max(np.linalg.norm(rows, axis=1)) * math.sqrt(2.0 * math.log(n)) / m)


def kernel_sensitivity_class_bound(sup_weight_sensitivity: float, gram_diagonal) -> RadEstimate:
    gram = np.asarray(gram_diagonal, dtype=float)
    if gram.ndim != 1 or gram.shape[0] < 1:
        raise DimensionMismatchError("gram diagonal must be a nonempty vector")
    if np.any(gram < 0):
        raise InvalidParameterError("gram diagonal entries must be nonnegative")
    m = gram.shape[0]
    root = math.sqrt(float(np.sum(gram)))
    value = sup_weight_sensitivity * root / m
    displayed = sup_weight_sensitivity * root / math.sqrt(m)
    logger.debug("kernel class bound: 1/m form %.6g, 1/sqrt(m) displayed form %.6g", value, displayed)
    return RadEstimate(value, CERTIFIED_UPPER, m,
                       metadata={"form": "1/m", "displayed_form_value": displayed})


def crude_decomposition_bound(rad_H: float, rad_HA: float, ha_singleton: bool = False) -> RadEstimate:
    """R(|H - H_A|) <= R(H) + R(H_A); equality when H_A is a singleton."""
    rad_H = getattr(rad_H, "value", rad_H)
    rad_HA = getattr(rad_HA, "value", rad_HA)
    if rad_H < 0 or rad_HA < 0:
        raise InvalidParameterError("complexities must be nonnegative")
    return RadEstimate(float(rad_H) + float(rad_HA), CERTIFIED_UPPER, 0,
                       metadata={"rad_H": rad_H, "rad_HA": rad_HA, "equality": bool(ha_singleton)})


def quantized_linear_rademacher_mc(features, step: float, n_sigma: int, seed: int) -> RadEstimate:
    """MC complexity of {<r, Phi(x)>: r in [-step/2, step/2]^D} on the given feature rows."""
    phi = np.asarray(features, dtype=float)
    half = step / 2.0
    return mc_rademacher_support(lambda sigma: half * np.abs(sigma @ phi).sum(axis=1),
                                 phi.shape[0], n_sigma, seed)


def sample_cluster_points(components: Sequence[Tuple[Any, Any, Any]], p: float, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """n points c_i + V_i diag(mu_i) u with ||u||_p <= 1, component chosen uniformly."""
    out = []
    for _ in range(n):
        c, V, mu = components[int(rng.integers(len(components)))]
        mu = np.asarray(mu, dtype=float)
        g = rng.normal(size=mu.shape[0])
        norm = float(np.max(np.abs(g))) if math.isinf(p) else float(np.linalg.norm(g, ord=p))
        u = g / norm * rng.uniform() if norm > 0 else np.zeros_like(g)
        out.append(np.asarray(c, dtype=float) + np.asarray(V, dtype=float) @ (mu * u))
    return np.vstack(out)


@dataclass(frozen=True)
class EllipseComponent:
    mu: Tuple[float, ...]
    rotation: Optional[Tuple[Tuple[float, ...], ...]] = None
    center: Optional[Tuple[float, ...]] = None

    def V(self, m: int) -> np.ndarray:
        return np.eye(m) if self.rotation is None else np.asarray(self.rotation, dtype=float)

    def c(self, m: int) -> np.ndarray:
        return np.zeros(m) if self.center is None else np.asarray(self.center, dtype=float)


def _load_geometry_schema() -> Dict[str, Any]:
    with open(GEOMETRY_SCHEMA_PATH, 'r', encoding='utf-8') as f:
        return json.load(f)


@dataclass(frozen=True)
class GeometryModel:
    """Structured description of a sensitivity point set."""

    variant: str
    p: float
    m: int
    components: Tuple[EllipseComponent, ...] = ()
    radius: Optional[float] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeometryModel":
        try:
            jsonschema.validate(data, _load_geometry_schema())
        except jsonschema.ValidationError as e:
            path = "/".join(str(part) for part in e.absolute_path) or "<root>"
            raise ConfigError(f"Invalid geometry description at {path}: {e.message}", {"field": path})
        variant = data["variant"]
        p = float(data["p"])
        if variant == "pball":
            return cls(variant, p, int(data["m"]), radius=float(data["radius"]))
        if variant == "ellipse":
            components = (EllipseComponent(tuple(data["mu"])),)
        else:
            components = tuple(
                EllipseComponent(
                    tuple(c["mu"]),
                    tuple(tuple(row) for row in c["rotation"]) if "rotation" in c else None,
                    tuple(c["center"]) if "center" in c else None,
                )
                for c in data["components"]
            )
        m = len(components[0].mu)
        model = cls(variant, p, m, components)
        model.validate()
        return model

    def validate(self):
        for comp in self.components:
            _check_mu(comp.mu, self.m)
            _check_orthogonal(comp.V(self.m), self.m)
            if comp.center is not None and len(comp.center) != self.m:
                raise DimensionMismatchError(f"cluster center must have length m = {self.m}")

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"variant": self.variant, "p": self.p}
        if self.variant == "pball":
            out.update({"m": self.m, "radius": self.radius})
        elif self.variant == "ellipse":
            out["mu"] = list(self.components[0].mu)
        else:
            comps = []
            for comp in self.components:
                entry: Dict[str, Any] = {"mu": list(comp.mu)}
                if comp.rotation is not None:
                    entry["rotation"] = [list(row) for row in comp.rotation]
                if comp.center is not None:
                    entry["center"] = list(comp.center)
                comps.append(entry)
            out["components"] = comps
        return out


def geometry_rademacher(model: GeometryModel) -> RadEstimate:
    m, p = model.m, model.p
    if model.variant == "pball":
        # R is exact only for the full p-ball of radius R m^{1/p}; a point set inside it gets an upper bound
        lower, upper = crude_bounds(model.radius, p)
        return RadEstimate(upper, CERTIFIED_UPPER, m,
                           metadata={"p": p, "crude_lower": lower, "exact_for": "full_ball"})
    if model.variant == "ellipse":
        return ellipse_rademacher(model.components[0].mu, p, m)
    if model.variant == "axis_union":
        return union_ellipse_bound([c.mu for c in model.components], p, m)
    if model.variant == "rotated_union":
        return rotated_union_bound([(c.V(m), c.mu) for c in model.components], p, m)
    return cluster_bound([(c.c(m), c.V(m), c.mu) for c in model.components], p, m)

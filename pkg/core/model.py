"""Samples, hypotheses, losses and approximation operators.

Every other module consumes the types defined here. All of them are
immutable after construction; randomness only enters through explicit seeds.
"""
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.preprocessing import PolynomialFeatures

from core.errors import DimensionMismatchError, IngestionError, InvalidParameterError
from core.utils import make_rng

logger = logging.getLogger(__name__)

CLIP_MARGIN = 2.0 ** -20
LOSS_CAP = 1.0 - CLIP_MARGIN

FEATURE_KINDS = ("identity", "polynomial", "rbf")
OPERATOR_KINDS = ("uniform_quantizer", "magnitude_pruner", "stochastic_rounder")
LOSS_KINDS = ("clipped_absolute", "clipped_hinge", "clipped_squared")
INPUT_LAWS = ("uniform_box", "gaussian", "gaussian_mixture")

MC_CHUNK = 1 << 16


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Explicit finite-dimensional feature map Phi."""

    kind: str
    input_dim: int
    degree: int = 2
    centers: Optional[np.ndarray] = None
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise InvalidParameterError(f"Unknown feature map kind: {self.kind}", {"allowed": list(FEATURE_KINDS)})
        if self.input_dim < 1:
            raise InvalidParameterError("input_dim must be at least 1")
        if self.kind == "polynomial" and self.degree < 1:
            raise InvalidParameterError("polynomial degree must be at least 1")
        if self.kind == "rbf":
            if self.centers is None:
                raise InvalidParameterError("rbf feature map needs centers")
            centers = _frozen_array(self.centers, 2, "centers")
            if centers.shape[1] != self.input_dim:
                raise DimensionMismatchError(
                    f"rbf centers have {centers.shape[1]} columns, expected {self.input_dim}")
            if self.width <= 0:
                raise InvalidParameterError("rbf width must be positive")
            object.__setattr__(self, "centers", centers)

    @classmethod
    def identity(cls, input_dim: int) -> "FeatureMap":
        return cls("identity", input_dim)

    @classmethod
    def polynomial(cls, input_dim: int, degree: int) -> "FeatureMap":
        return cls("polynomial", input_dim, degree=degree)

    @classmethod
    def rbf(cls, centers, width: float) -> "FeatureMap":
        centers = np.asarray(centers, dtype=float)
        return cls("rbf", centers.shape[1], centers=centers, width=width)

    @property
    def dim(self) -> int:
        if self.kind == "identity":
            return self.input_dim
        if self.kind == "polynomial":
            return int(PolynomialFeatures(self.degree).fit(np.zeros((1, self.input_dim))).n_output_features_)
        return int(self.centers.shape[0])

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"inputs must have shape (m, {self.input_dim}), got {X.shape}",
                {"expected_columns": self.input_dim, "shape": list(X.shape)})
        if self.kind == "identity":
            return X
        if self.kind == "polynomial":
            return PolynomialFeatures(self.degree).fit_transform(X)
        return rbf_kernel(X, self.centers, gamma=1.0 / (2.0 * self.width ** 2))

    def gram_diagonal(self, X) -> np.ndarray:
        """k(x, x) = ||Phi(x)||^2 for every row of X."""
        phi = self.transform(X)
        return np.einsum("ij,ij->i", phi, phi)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "input_dim": self.input_dim}
        if self.kind == "polynomial":
            out["degree"] = self.degree
        if self.kind == "rbf":
            out["centers"] = self.centers.tolist()
            out["width"] = self.width
        return out


@dataclass(frozen=True, eq=False)
class Hypothesis:
    weights: np.ndarray
    feature_map: FeatureMap

    def __post_init__(self):
        weights = _frozen_array(self.weights, 1, "weights")
        if weights.shape[0] != self.feature_map.dim:
            raise DimensionMismatchError(
                f"weight length {weights.shape[0]} does not match feature dimension {self.feature_map.dim}")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def linear(cls, weights) -> "Hypothesis":
        weights = np.asarray(weights, dtype=float)
        return cls(weights, FeatureMap.identity(weights.shape[0]))

    def with_weights(self, weights) -> "Hypothesis":
        return Hypothesis(weights, self.feature_map)


def predict(h: Hypothesis, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != h.feature_map.input_dim:
        raise DimensionMismatchError(
            f"input has shape {x.shape}, feature map expects {h.feature_map.input_dim} coordinates")
    phi = h.feature_map.transform(x[np.newaxis, :])[0]
    return float(np.dot(h.weights, phi))


def predict_batch(h: Hypothesis, X) -> np.ndarray:
    return h.feature_map.transform(X) @ h.weights


@dataclass(frozen=True)
class ApproxOperator:
    """Weight transform Q realising Af_w(x) = <Q(w), Phi(x)>."""

    kind: str
    step: Optional[float] = None
    clamp: Optional[float] = None
    keep: Optional[int] = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise InvalidParameterError(f"Unknown operator kind: {self.kind}", {"allowed": list(OPERATOR_KINDS)})
        if self.kind in ("uniform_quantizer", "stochastic_rounder"):
            if self.step is None or not self.step > 0:
                raise InvalidParameterError("quantization step must be positive", {"step": self.step})
            if self.clamp is not None and not self.clamp > 0:
                raise InvalidParameterError("clamp range must be positive", {"clamp": self.clamp})
        if self.kind == "uniform_quantizer" and self.clamp is None:
            raise InvalidParameterError("uniform_quantizer needs a clamp range")
        if self.kind == "stochastic_rounder" and self.clamp is not None:
            # rounding up from the clamped range must stay on a level inside [-clamp, clamp]
            levels = self.clamp / self.step
            if abs(levels - round(levels)) > 1e-9 * max(1.0, levels):
                raise InvalidParameterError("stochastic_rounder clamp must be a multiple of step",
                                            {"step": self.step, "clamp": self.clamp})
        if self.kind == "magnitude_pruner":
            if self.keep is None or self.keep < 0:
                raise InvalidParameterError("keep-count must be a nonnegative integer", {"keep": self.keep})

    @classmethod
    def uniform_quantizer(cls, step: float, clamp: float) -> "ApproxOperator":
        return cls("uniform_quantizer", step=float(step), clamp=float(clamp))

    @classmethod
    def magnitude_pruner(cls, keep: int) -> "ApproxOperator":
        return cls("magnitude_pruner", keep=int(keep))

    @classmethod
    def stochastic_rounder(cls, step: float, clamp: Optional[float] = None) -> "ApproxOperator":
        return cls("stochastic_rounder", step=float(step), clamp=None if clamp is None else float(clamp))

    @property
    def deterministic(self) -> bool:
        return self.kind != "stochastic_rounder"

    def transform_weights(self, w, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.kind == "uniform_quantizer":
            # np.round rounds exact midpoints to the even multiple of step
            return np.round(np.clip(w, -self.clamp, self.clamp) / self.step) * self.step
        if self.kind == "magnitude_pruner":
            if self.keep > w.shape[-1]:
                raise InvalidParameterError(
                    f"keep-count {self.keep} exceeds weight dimension {w.shape[-1]}")
            order = np.argsort(-np.abs(w), kind="stable")
            out = np.zeros_like(w)
            kept = order[:self.keep]
            out[kept] = w[kept]
            return out
        if rng is None:
            raise InvalidParameterError("stochastic rounding needs a random generator")
        c = w if self.clamp is None else np.clip(w, -self.clamp, self.clamp)
        scaled = c / self.step
        lower = np.floor(scaled)
        up = rng.random(scaled.shape) < (scaled - lower)
        return (lower + up) * self.step

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("step", "clamp", "keep"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def apply_operator(op: ApproxOperator, h: Hypothesis, noise_seed: Optional[int] = None) -> Hypothesis:
    """Return Ah; deterministic operators ignore ``noise_seed``."""
    if op.deterministic:
        return h.with_weights(op.transform_weights(h.weights))
    if noise_seed is None:
        raise InvalidParameterError("stochastic operators require a noise_seed")
    return h.with_weights(op.transform_weights(h.weights, make_rng(noise_seed)))


@dataclass(frozen=True)
class LossSpec:
    """Bounded rho-Lipschitz loss; the bound B is fixed to 1."""

    kind: str = "clipped_absolute"
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidParameterError(f"Unknown loss kind: {self.kind}", {"allowed": list(LOSS_KINDS)})
        if not self.rho > 0:
            raise InvalidParameterError("loss Lipschitz constant must be positive", {"rho": self.rho})

    @property
    def bound(self) -> float:
        return 1.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rho": self.rho}


def loss_values(spec: LossSpec, predictions, targets) -> np.ndarray:
    a = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if spec.kind == "clipped_absolute":
        raw = spec.rho * np.abs(a - y)
    elif spec.kind == "clipped_hinge":
        sign = np.where(y >= 0, 1.0, -1.0)
        raw = spec.rho * np.maximum(0.0, 1.0 - sign * a)
    else:
        raw = np.square(spec.rho * np.abs(a - y) / 2.0)
    return np.minimum(raw, LOSS_CAP)


def loss_value(spec: LossSpec, prediction: float, target: float) -> float:
    return float(loss_values(spec, prediction, target))


@dataclass(frozen=True, eq=False)
class LabelledSample:
    inputs: np.ndarray
    targets: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        inputs = _frozen_array(self.inputs, 2, "inputs")
        targets = _frozen_array(self.targets, 1, "targets")
        if inputs.shape[0] != targets.shape[0]:
            raise DimensionMismatchError(
                f"{inputs.shape[0]} input rows but {targets.shape[0]} targets")
        if inputs.shape[0] < 1:
            raise InvalidParameterError("a sample needs at least one row")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise InvalidParameterError("sample entries must be finite", {"source_id": self.source_id})
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def unlabelled(self) -> "UnlabelledSample":
        return UnlabelledSample(self.inputs, self.source_id)


@dataclass(frozen=True, eq=False)
class UnlabelledSample:
    inputs: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        inputs = _frozen_array(self.inputs, 2, "inputs")
        if inputs.shape[0] < 1:
            raise InvalidParameterError("a sample needs at least one row")
        if not np.all(np.isfinite(inputs)):
            raise InvalidParameterError("sample entries must be finite", {"source_id": self.source_id})
        object.__setattr__(self, "inputs", inputs)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


Sample = Union[LabelledSample, UnlabelledSample]


def empirical_error(h: Hypothesis, s: LabelledSample, spec: LossSpec) -> float:
    return float(np.mean(loss_values(spec, predict_batch(h, s.inputs), s.targets)))


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """Data-generating law: input distribution plus a teacher with gaussian label noise."""

    teacher: Hypothesis
    input_law: str = "uniform_box"
    box_low: float = -1.0
    box_high: float = 1.0
    sd: float = 1.0
    centers: Optional[np.ndarray] = None
    label_noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.input_law not in INPUT_LAWS:
            raise InvalidParameterError(f"Unknown input law: {self.input_law}", {"allowed": list(INPUT_LAWS)})
        if self.label_noise_sd < 0:
            raise InvalidParameterError("label_noise_sd must be nonnegative")
        if self.input_law == "uniform_box" and not self.box_high > self.box_low:
            raise InvalidParameterError("box_high must exceed box_low")
        if self.input_law in ("gaussian", "gaussian_mixture") and not self.sd > 0:
            raise InvalidParameterError("gaussian sd must be positive")
        if self.input_law == "gaussian_mixture":
            if self.centers is None:
                raise InvalidParameterError("gaussian_mixture needs centers")
            centers = _frozen_array(self.centers, 2, "centers")
            if centers.shape[1] != self.input_dim:
                raise DimensionMismatchError("mixture centers do not match the input dimension")
            object.__setattr__(self, "centers", centers)

    @property
    def input_dim(self) -> int:
        return self.teacher.feature_map.input_dim


def sample_inputs(task: SyntheticTask, n: int, rng: np.random.Generator) -> np.ndarray:
    d = task.input_dim
    if task.input_law == "uniform_box":
        return rng.uniform(task.box_low, task.box_high, size=(n, d))
    if task.input_law == "gaussian":
        return rng.normal(0.0, task.sd, size=(n, d))
    comps = rng.integers(task.centers.shape[0], size=n)
    return task.centers[comps] + rng.normal(0.0, task.sd, size=(n, d))


def _labels(task: SyntheticTask, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    y = predict_batch(task.teacher, X)
    if task.label_noise_sd > 0:
        y = y + rng.normal(0.0, task.label_noise_sd, size=y.shape)
    return y


def generate(task: SyntheticTask, m: int, labelled: bool = True, stream: int = 0) -> Sample:
    """Draw m i.i.d. points; ``stream`` separates independent samples of one task."""
    if m < 1:
        raise InvalidParameterError("sample size must be at least 1", {"m": m})
    kind = "labelled" if labelled else "unlabelled"
    rng = make_rng(task.seed, "generate", kind, stream)
    X = sample_inputs(task, m, rng)
    source_id = f"synthetic:{task.seed}:{kind}:{stream}"
    if labelled:
        return LabelledSample(X, _labels(task, X, rng), source_id)
    return UnlabelledSample(X, source_id)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    std_error: float
    n: int

    @property
    def certified(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n": self.n}


def summarize_draws(values: np.ndarray) -> MonteCarloEstimate:
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    std_error = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MonteCarloEstimate(float(np.mean(values)), std_error, n)


def true_error_mc(h: Hypothesis, task: SyntheticTask, spec: LossSpec, n_mc: int, seed: int) -> MonteCarloEstimate:
    if n_mc < 1:
        raise InvalidParameterError("n_mc must be at least 1", {"n_mc": n_mc})
    rng = make_rng(seed)
    chunks: List[np.ndarray] = []
    remaining = n_mc
    while remaining > 0:
        n = min(MC_CHUNK, remaining)
        X = sample_inputs(task, n, rng)
        y = _labels(task, X, rng)
        chunks.append(loss_values(spec, predict_batch(h, X), y))
        remaining -= n
    return summarize_draws(np.concatenate(chunks))


def read_sample_csv(path: str, source_id: Optional[str] = None) -> Sample:
    """Load a sample; a final ``target`` column makes it labelled."""
    if not os.path.exists(path):
        raise IngestionError(f"Sample file not found: {path}", {"path": path})
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"Could not parse sample file {path}: {e}", {"path": path})
    if df.shape[1] == 0 or df.shape[0] == 0:
        raise IngestionError(f"Sample file {path} has no data", {"path": path})
    non_numeric = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    if non_numeric:
        raise IngestionError(f"Non-numeric columns in {path}", {"path": path, "columns": non_numeric})
    values = df.to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise IngestionError(f"Non-finite entries in {path}", {"path": path})

    source_id = source_id or os.path.basename(path)
    if df.columns[-1] == "target":
        if df.shape[1] < 2:
            raise IngestionError(f"Sample file {path} has a target but no features", {"path": path})
        return LabelledSample(values[:, :-1], values[:, -1], source_id)
    return UnlabelledSample(values, source_id)


def write_sample_csv(sample: Sample, path: str) -> str:
    columns = [f"x{j}" for j in range(sample.d)]
    df = pd.DataFrame(np.asarray(sample.inputs), columns=columns)
    if isinstance(sample, LabelledSample):
        df["target"] = np.asarray(sample.targets)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    return path

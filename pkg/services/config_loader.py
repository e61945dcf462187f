"""Experiment configuration files: JSON validated against data/schema/experiment_schema.json."""
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Tuple

import jsonschema

from core.errors import ConfigError, DimensionMismatchError, InvalidParameterError
from core.model import (ApproxOperator, FeatureMap, Hypothesis, LabelledSample, LossSpec, SyntheticTask,
                        UnlabelledSample, generate, read_sample_csv)
from core.utils import inputs_digest
from services.learners import SearchDomain

logger = logging.getLogger(__name__)

SCHEMA_DIR = os.path.join(os.path.dirname(__file__), '..', 'data', 'schema')
EXPERIMENT_SCHEMA = 'experiment_schema.json'
CONSTITUENTS_SCHEMA = 'constituents_schema.json'

DEFAULT_DELTA = 0.05
DEFAULT_N_MC = 100000

BAD_VALUE_ERRORS = (InvalidParameterError, DimensionMismatchError)


def load_schema(filename: str) -> Dict[str, Any]:
    with open(os.path.join(SCHEMA_DIR, filename), 'r', encoding='utf-8') as f:
        return json.load(f)


def read_json_file(path: str, schema_file: str) -> Dict[str, Any]:
    """Parse and schema-check a JSON file, reporting the line or field at fault."""
    if not os.path.exists(path):
        raise ConfigError(f"File not found: {path}", {"path": path})
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
                          {"path": path, "line": e.lineno, "column": e.colno})
    validator = jsonschema.Draft7Validator(load_schema(schema_file))
    error = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if error is not None:
        field = "/".join(str(part) for part in error.absolute_path) or "<root>"
        raise ConfigError(f"{path}: invalid value at {field}: {error.message}", {"path": path, "field": field})
    return data


def build_feature_map(spec: Optional[Dict[str, Any]], default_input_dim: Optional[int] = None) -> FeatureMap:
    spec = spec or {"kind": "identity"}
    kind = spec["kind"]
    if kind == "rbf":
        if "centers" not in spec:
            raise ConfigError("rbf feature map needs centers", {"field": "feature_map/centers"})
        return FeatureMap.rbf(spec["centers"], spec.get("width", 1.0))
    input_dim = spec.get("input_dim", default_input_dim)
    if input_dim is None:
        raise ConfigError(f"{kind} feature map needs input_dim", {"field": "feature_map/input_dim"})
    if kind == "polynomial":
        return FeatureMap.polynomial(input_dim, spec.get("degree", 2))
    return FeatureMap.identity(input_dim)


def build_hypothesis(spec: Dict[str, Any]) -> Hypothesis:
    weights = spec["weights"]
    fm_spec = spec.get("feature_map")
    # identity maps default to one input per weight
    default_dim = len(weights) if (fm_spec is None or fm_spec["kind"] == "identity") else None
    return Hypothesis(weights, build_feature_map(fm_spec, default_dim))


class ExperimentConfig:
    """A validated experiment configuration plus builders for the objects it describes."""

    def __init__(self, raw: Dict[str, Any], path: Optional[str] = None):
        self.raw = raw
        self.path = path
        self.base_dir = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        raw = read_json_file(path, EXPERIMENT_SCHEMA)
        logger.info("Loaded experiment config %s (seed=%s)", path, raw["seed"])
        return cls(raw, path)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def delta(self) -> float:
        return float(self.raw.get("delta", DEFAULT_DELTA))

    @property
    def trials(self) -> Optional[int]:
        """Configured suite trial count; None leaves the suite default in place."""
        trials = self.raw.get("trials")
        return None if trials is None else int(trials)

    @property
    def output_dir(self) -> Optional[str]:
        out = self.raw.get("output_dir")
        return None if out is None else self._resolve(out)

    @property
    def task_spec(self) -> Dict[str, Any]:
        return self.raw["task"]

    @property
    def is_synthetic(self) -> bool:
        return self.task_spec["source"] == "synthetic"

    @property
    def learner_spec(self) -> Dict[str, Any]:
        return self.raw.get("learner", {})

    @property
    def sensitivity_spec(self) -> Dict[str, Any]:
        return self.raw.get("sensitivity", {})

    @property
    def bounds(self) -> List[str]:
        return list(self.raw.get("bounds", []))

    @property
    def n_mc(self) -> int:
        return int(self.task_spec.get("n_mc", DEFAULT_N_MC))

    def digest(self) -> str:
        return inputs_digest(self.raw)

    def _resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def operator(self) -> ApproxOperator:
        spec = self.raw["operator"]
        try:
            return ApproxOperator(spec["kind"], step=spec.get("step"), clamp=spec.get("clamp"), keep=spec.get("keep"))
        except BAD_VALUE_ERRORS as e:
            raise ConfigError(f"operator: {e.message}", {"field": "operator", **e.details})

    def loss(self) -> LossSpec:
        spec = self.raw["loss"]
        return LossSpec(spec["kind"], float(spec.get("rho", 1.0)))

    def task(self) -> SyntheticTask:
        if not self.is_synthetic:
            raise ConfigError("this command needs a synthetic task", {"field": "task/source"})
        spec = self.task_spec
        law = spec.get("input_law", {"kind": "uniform_box"})
        try:
            return SyntheticTask(
                teacher=build_hypothesis(spec["teacher"]),
                input_law=law["kind"],
                box_low=float(law.get("low", -1.0)),
                box_high=float(law.get("high", 1.0)),
                sd=float(law.get("sd", 1.0)),
                centers=law.get("centers"),
                label_noise_sd=float(spec.get("label_noise_sd", 0.0)),
                seed=self.seed,
            )
        except BAD_VALUE_ERRORS as e:
            raise ConfigError(f"task: {e.message}", {"field": "task", **e.details})

    def feature_map(self) -> FeatureMap:
        if self.is_synthetic:
            return self.task().teacher.feature_map
        return build_feature_map(self.task_spec.get("feature_map"), self.samples()[0].d)

    def samples(self) -> Tuple[LabelledSample, Optional[UnlabelledSample]]:
        """(labelled, unlabelled) from the generator or the configured CSV files."""
        spec = self.task_spec
        if self.is_synthetic:
            task = self.task()
            labelled = generate(task, int(spec["m"]), labelled=True)
            unlabelled = generate(task, int(spec["m_u"]), labelled=False) if "m_u" in spec else None
            return labelled, unlabelled
        labelled = read_sample_csv(self._resolve(spec["labelled_path"]))
        if not isinstance(labelled, LabelledSample):
            raise ConfigError(f"{spec['labelled_path']} has no target column", {"field": "task/labelled_path"})
        unlabelled = None
        if "unlabelled_path" in spec:
            unlabelled = read_sample_csv(self._resolve(spec["unlabelled_path"]))
            if isinstance(unlabelled, LabelledSample):
                unlabelled = unlabelled.unlabelled()
            if unlabelled.d != labelled.d:
                raise ConfigError("labelled and unlabelled samples have different input dimensions",
                                  {"labelled": labelled.d, "unlabelled": unlabelled.d})
        return labelled, unlabelled

    def hypothesis(self) -> Hypothesis:
        """The hypothesis whose sensitivity is reported; defaults to the synthetic teacher."""
        if "hypothesis" in self.raw:
            try:
                return build_hypothesis(self.raw["hypothesis"])
            except BAD_VALUE_ERRORS as e:
                raise ConfigError(f"hypothesis: {e.message}", {"field": "hypothesis", **e.details})
        if self.is_synthetic:
            return self.task().teacher
        raise ConfigError("a csv task needs an explicit hypothesis", {"field": "hypothesis"})

    def domain(self) -> SearchDomain:
        dim = self.feature_map().dim
        spec = self.raw.get("domain")
        if spec is None:
            return SearchDomain.default(dim, seed=self.seed)
        default = SearchDomain.default(dim, spec.get("half_width", 1.0), self.seed)
        try:
            return SearchDomain(
                dim=dim,
                half_width=float(spec.get("half_width", default.half_width)),
                mode=spec.get("mode", default.mode),
                points_per_axis=int(spec.get("points_per_axis", default.points_per_axis)),
                n_samples=int(spec.get("n_samples", default.n_samples)),
                restarts=int(spec.get("restarts", default.restarts)),
                iterations=int(spec.get("iterations", default.iterations)),
                seed=self.seed,
            )
        except InvalidParameterError as e:
            raise ConfigError(f"domain: {e.message}", {"field": "domain", **e.details})

    def threshold(self) -> float:
        t = self.learner_spec.get("t")
        if t is None:
            raise ConfigError("learner needs a threshold t", {"field": "learner/t"})
        return math.inf if t == "inf" else float(t)

    def require(self, section: str, key: str) -> Any:
        spec = self.raw.get(section, {})
        if key not in spec:
            raise ConfigError(f"missing {section}/{key}", {"field": f"{section}/{key}"})
        return spec[key]

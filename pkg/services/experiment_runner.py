import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.bounds import (BoundReport, balcan_guarantee_bound, deployment_penalty_bound, joint_bounds,
                         lambda_equivalence_bound, regularized_bound, restricted_erm_guarantee, srm_uniform_bound,
                         stochastic_bound, stochastic_fixed_omega_bound, uniform_restricted_bound)
from core.errors import ConfigError, IngestionError, InvalidParameterError, MissingConstituentError
from core.model import (Hypothesis, LabelledSample, MonteCarloEstimate, UnlabelledSample, empirical_error,
                        true_error_mc, write_sample_csv)
from core.rad_geometry import (MAX_EXACT_M, GeometryModel, RadEstimate, SensitivityPointSet,
                               exact_rademacher_pointset, geometry_rademacher, mc_rademacher_pointset,
                               sensitivity_pointset)
from core.sensitivity import (analytic_sensitivity_upper, empirical_sensitivity, expected_sensitivity,
                              sensitivity_deviation_bound, true_sensitivity_mc, uniform_sensitivity_constant,
                              unlabelled_epsilon_u)
from core.utils import derive_seed, inputs_digest, write_json
from services.config_loader import CONSTITUENTS_SCHEMA, ExperimentConfig, read_json_file
from services.learners import (LearnerOutput, SearchDomain, SensitivityFunction, ThresholdSchedule,
                               analytic_lambda_erm, constrained_erm, lambda_erm, lambda_grid_srm,
                               sensitivity_regularized_erm, srm_learner)
from services.validation_suites import run_suite

logger = logging.getLogger(__name__)

VERSION = "1.0"
DEFAULT_N_SIGMA = 2000
DEFAULT_N_OMEGA = 1000
BOUNDS_CSV = "bounds.csv"

# bound name -> (required constituents, optional constituents)
BOUND_CONSTITUENTS: Dict[str, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    "uniform_restricted": (("emp_err", "rad_Ht", "rho", "m", "delta"), ()),
    "restricted_erm": (("err_star_t", "rad_Ht", "rho", "m", "delta"), ()),
    "srm_uniform": (("emp_err", "rad_Ht_k", "w_k", "rho", "m", "delta"), ()),
    "joint": (("err_f_star", "rad_HA", "rho", "t", "m", "delta"), ("err_af_star", "err_g_star")),
    "regularized": (("err_star_t", "rho", "t", "rad_HA", "m", "delta"), ("epsilon_u",)),
    "lambda_equivalence": (("rho", "rad_HA", "m", "delta", "lambda"), ("epsilon_u", "w_k")),
    "stochastic": (("exp_emp_err", "exp_sensitivity", "exp_rad", "rho", "m", "delta"), ()),
    "stochastic_fixed_omega": (("emp_err_omega", "sensitivity_omega", "rad_omega", "rho", "m", "delta"), ()),
    "srm_guarantee": (("err_star_k", "rad_Ht_k", "w_k", "rho", "m", "delta"), ()),
}


def parse_constituent(value: Any) -> Any:
    """Numbers stay floats; estimate objects keep their provenance."""
    if isinstance(value, list):
        return [parse_constituent(v) for v in value]
    if isinstance(value, dict):
        if "method" in value:
            return RadEstimate.from_dict({"m": 0, **value})
        if value.get("std_error") is not None and "n" in value:
            return MonteCarloEstimate(float(value["value"]), float(value["std_error"]), int(value["n"]))
        return float(value["value"])
    return float(value)


def read_pointset_csv(path: str) -> SensitivityPointSet:
    """One row per hypothesis, one column per sample point."""
    if not os.path.exists(path):
        raise IngestionError(f"Point set file not found: {path}", {"path": path})
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"Could not parse point set {path}: {e}", {"path": path})
    try:
        values = df.to_numpy(dtype=float)
    except ValueError:
        raise IngestionError(f"Non-numeric entries in {path}", {"path": path})
    try:
        return SensitivityPointSet(values)
    except (InvalidParameterError, ValueError) as e:
        raise IngestionError(f"Invalid point set {path}: {e}", {"path": path})


class ExperimentRunner:
    """Runs the experiment commands and returns status envelopes."""

    def __init__(self, threads: int = 1):
        self.threads = threads

    @staticmethod
    def _envelope(command: str, result: Any, message: str, **metadata) -> Dict[str, Any]:
        return {
            "metadata": {"version": VERSION, "command": command, **metadata},
            "result": result,
            "status": {"success": True, "message": message},
        }

    @staticmethod
    def _write(out_dir: Optional[str], filename: str, payload: Dict[str, Any]) -> Optional[str]:
        if not out_dir:
            return None
        path = write_json(os.path.join(out_dir, filename), payload)
        logger.info("Wrote %s", path)
        return path

    # -- generate ----------------------------------------------------------------

    def generate(self, config: ExperimentConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
        out_dir = out_dir or config.output_dir
        if not out_dir:
            raise ConfigError("generate needs an output directory (--out or output_dir)", {"field": "output_dir"})
        labelled, unlabelled = config.samples()
        files = {"labelled": write_sample_csv(labelled, os.path.join(out_dir, "labelled.csv"))}
        if unlabelled is not None:
            files["unlabelled"] = write_sample_csv(unlabelled, os.path.join(out_dir, "unlabelled.csv"))
        result = {
            "files": {k: os.path.basename(v) for k, v in files.items()},
            "m": labelled.m,
            "m_u": None if unlabelled is None else unlabelled.m,
            "d": labelled.d,
        }
        envelope = self._envelope("generate", result, "samples written", config_digest=config.digest())
        self._write(out_dir, "generate.json", envelope)
        return envelope

    # -- train -------------------------------------------------------------------

    def _sensitivity_fn(self, config: ExperimentConfig, unlabelled: Optional[UnlabelledSample],
                        labelled: LabelledSample) -> SensitivityFunction:
        spec = config.learner_spec
        op = config.operator()
        p = float(spec.get("p", 1.0))
        variant = spec.get("sensitivity", "empirical")
        if variant == "empirical":
            if unlabelled is None:
                raise ConfigError("empirical sensitivity needs an unlabelled sample", {"field": "task/m_u"})
            return SensitivityFunction.empirical(op, unlabelled, p)
        if variant == "monte_carlo_true":
            return SensitivityFunction.monte_carlo_true(op, config.task(), p, config.n_mc,
                                                        derive_seed(config.seed, "true_sensitivity"))
        return SensitivityFunction.analytic_upper(op, self._input_norm_budget(spec, labelled, config))

    @staticmethod
    def _input_norm_budget(spec: Dict[str, Any], labelled: LabelledSample, config: ExperimentConfig) -> float:
        if "input_norm_budget" in spec:
            return float(spec["input_norm_budget"])
        # largest feature norm seen on the labelled inputs
        return float(np.sqrt(np.max(config.feature_map().gram_diagonal(labelled.inputs))))

    def _epsilon_u(self, config: ExperimentConfig, domain: SearchDomain, unlabelled: UnlabelledSample,
                   n_sigma: int) -> float:
        if domain.mode == "coordinate_descent":
            raise ConfigError("srm with coordinate_descent needs an explicit epsilon_u", {"field": "learner/epsilon_u"})
        op = config.operator()
        fm = config.feature_map()
        candidates = domain.candidates()
        hyps = [Hypothesis(w, fm) for w in candidates]
        ps = sensitivity_pointset(hyps, op, unlabelled)
        rad = mc_rademacher_pointset(ps, n_sigma, derive_seed(config.seed, "epsilon_u"))
        C = uniform_sensitivity_constant(candidates, op, unlabelled.inputs, fm)
        bound = unlabelled_epsilon_u(rad, C, unlabelled.m, config.delta)
        logger.info("epsilon_u = %.6g from %d candidates", bound.epsilon_u, len(hyps))
        return bound.epsilon_u

    def _run_learner(self, config: ExperimentConfig, labelled: LabelledSample,
                     unlabelled: Optional[UnlabelledSample]) -> Tuple[LearnerOutput, Dict[str, Any]]:
        spec = config.learner_spec
        if "algorithm" not in spec:
            raise ConfigError("train needs a learner block", {"field": "learner"})
        algorithm = spec["algorithm"]
        op, loss, domain, fm = config.operator(), config.loss(), config.domain(), config.feature_map()
        p = float(spec.get("p", 1.0))
        n_sigma = int(spec.get("n_sigma", DEFAULT_N_SIGMA))
        extra: Dict[str, Any] = {}
        threads = self.threads

        if algorithm == "constrained_erm":
            sensitivity_fn = self._sensitivity_fn(config, unlabelled, labelled)
            out = constrained_erm(labelled, unlabelled, op, config.threshold(), p, loss, domain, fm,
                                  sensitivity_fn=sensitivity_fn, threads=threads)
        elif algorithm == "srm":
            if unlabelled is None:
                raise ConfigError("srm needs an unlabelled sample", {"field": "task/m_u"})
            schedule = ThresholdSchedule(tuple(config.require("learner", "thresholds")), _tuple(spec.get("weights")))
            epsilon_u = spec.get("epsilon_u")
            if epsilon_u is None:
                epsilon_u = self._epsilon_u(config, domain, unlabelled, n_sigma)
            out = srm_learner(labelled, unlabelled, op, schedule, float(epsilon_u), None, loss, domain, p, fm,
                              n_sigma=n_sigma, threads=threads)
        elif algorithm == "sensitivity_regularized_erm":
            sensitivity_fn = self._sensitivity_fn(config, unlabelled, labelled)
            out = sensitivity_regularized_erm(labelled, op, sensitivity_fn, loss, domain, spec.get("lambda"), fm,
                                              threads=threads)
        elif algorithm == "lambda_erm":
            if unlabelled is None:
                raise ConfigError("lambda_erm needs an unlabelled sample", {"field": "task/m_u"})
            out = lambda_erm(labelled, unlabelled, op, float(config.require("learner", "lambda")), p, loss, domain,
                             fm, threads=threads)
        elif algorithm == "analytic_lambda_erm":
            budget = self._input_norm_budget(spec, labelled, config)
            out = analytic_lambda_erm(labelled, op, float(config.require("learner", "lambda")),
                                      SensitivityFunction.analytic_upper(op, budget), loss, domain, fm,
                                      threads=threads)
            extra["input_norm_budget"] = budget
        else:
            if unlabelled is None:
                raise ConfigError("lambda_grid_srm needs an unlabelled sample", {"field": "task/m_u"})
            out, rows = lambda_grid_srm(labelled, unlabelled, op, config.require("learner", "lambdas"),
                                        spec.get("weights"), p, loss, domain, fm, threads=threads)
            extra["lambda_grid"] = rows
        return out, extra

    def _evaluate(self, config: ExperimentConfig, out: LearnerOutput, labelled: LabelledSample,
                  unlabelled: Optional[UnlabelledSample]) -> Dict[str, Any]:
        op, loss = config.operator(), config.loss()
        p = float(config.learner_spec.get("p", 1.0))
        evaluation: Dict[str, Any] = {
            "empirical_error": empirical_error(out.hypothesis, labelled, loss),
            "approx_empirical_error": empirical_error(out.approx_hypothesis, labelled, loss),
        }
        if unlabelled is not None and op.deterministic:
            evaluation["empirical_sensitivity"] = empirical_sensitivity(out.hypothesis, op, unlabelled, p).value
        if config.is_synthetic and op.deterministic:
            task = config.task()
            seed = derive_seed(config.seed, "evaluation")
            err_f = true_error_mc(out.hypothesis, task, loss, config.n_mc, seed)
            err_af = true_error_mc(out.approx_hypothesis, task, loss, config.n_mc, seed)
            sens = true_sensitivity_mc(out.hypothesis, op, task, 1.0, config.n_mc,
                                       derive_seed(config.seed, "true_sensitivity"))
            evaluation.update({
                "true_error": err_f.to_dict(),
                "true_approx_error": err_af.to_dict(),
                "true_sensitivity": sens.to_dict(),
                "deployment_penalty_bound": deployment_penalty_bound(err_f, loss.rho, sens),
            })
        return evaluation

    def train(self, config: ExperimentConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
        out_dir = out_dir or config.output_dir
        labelled, unlabelled = config.samples()
        out, extra = self._run_learner(config, labelled, unlabelled)
        result = out.to_dict()
        result.update(extra)
        result["evaluation"] = self._evaluate(config, out, labelled, unlabelled)
        envelope = self._envelope("train", result, f"{out.algorithm} finished", config_digest=config.digest(),
                                  seed=config.seed)
        self._write(out_dir, "train.json", envelope)
        return envelope

    # -- sensitivity -------------------------------------------------------------

    def sensitivity(self, config: ExperimentConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
        out_dir = out_dir or config.output_dir
        spec = config.sensitivity_spec
        h = config.hypothesis()
        op = config.operator()
        labelled, unlabelled = config.samples()
        sample = unlabelled if unlabelled is not None else labelled.unlabelled()
        p_values = [float(p) for p in spec.get("p", [1.0])]
        estimates: List[Dict[str, Any]] = []

        if op.deterministic:
            for p in p_values:
                estimates.append(empirical_sensitivity(h, op, sample, p).to_dict())
                if config.is_synthetic:
                    estimates.append(true_sensitivity_mc(h, op, config.task(), p, int(spec.get("n_mc", config.n_mc)),
                                                         derive_seed(config.seed, "true_sensitivity")).to_dict())
            if "input_norm_budget" in spec:
                estimates.append(analytic_sensitivity_upper(h, op, float(spec["input_norm_budget"])).to_dict())
        else:
            for p in p_values:
                estimates.append(expected_sensitivity(h, op, sample, p, int(spec.get("n_omega", DEFAULT_N_OMEGA)),
                                                      derive_seed(config.seed, "omega"), self.threads).to_dict())

        result: Dict[str, Any] = {"hypothesis": h.weights.tolist(), "operator": op.to_dict(),
                                  "estimates": estimates}
        if op.deterministic and "domain" in config.raw:
            result["deviation_bound"] = self._deviation_bound(config, sample, int(spec.get("n_sigma", DEFAULT_N_SIGMA)))
        envelope = self._envelope("sensitivity", result, f"{len(estimates)} estimates",
                                  config_digest=config.digest(), seed=config.seed)
        self._write(out_dir, "sensitivity.json", envelope)
        return envelope

    def _deviation_bound(self, config: ExperimentConfig, sample: UnlabelledSample, n_sigma: int) -> Dict[str, Any]:
        domain = config.domain()
        if domain.mode == "coordinate_descent":
            raise ConfigError("the deviation bound needs a grid or random domain", {"field": "domain/mode"})
        op, fm = config.operator(), config.feature_map()
        candidates = domain.candidates()
        ps = sensitivity_pointset([Hypothesis(w, fm) for w in candidates], op, sample)
        rad = mc_rademacher_pointset(ps, n_sigma, derive_seed(config.seed, "deviation"))
        C = uniform_sensitivity_constant(candidates, op, sample.inputs, fm)
        bound = sensitivity_deviation_bound(rad, C, sample.m, config.delta)
        return {**bound.to_dict(), "rademacher": rad.to_dict()}

    # -- rademacher --------------------------------------------------------------

    def rademacher(self, input_path: str, method: str = "auto", n_sigma: int = DEFAULT_N_SIGMA, seed: int = 0,
                   absolute: bool = False, out_dir: Optional[str] = None) -> Dict[str, Any]:
        if input_path.lower().endswith(".json"):
            data = read_json_file(input_path, "geometry_schema.json")
            model = GeometryModel.from_dict(data)
            estimate = geometry_rademacher(model)
            result = {"input": "geometry", "variant": model.variant, "estimate": estimate.to_dict()}
        else:
            ps = read_pointset_csv(input_path)
            if method == "auto":
                method = "exact" if ps.m <= MAX_EXACT_M else "mc"
            if method == "exact":
                estimate = exact_rademacher_pointset(ps, absolute=absolute)
            else:
                estimate = mc_rademacher_pointset(ps, n_sigma, seed, absolute=absolute)
            result = {"input": "pointset", "n": ps.n, "m": ps.m, "estimate": estimate.to_dict()}
        envelope = self._envelope("rademacher", result, f"{estimate.method} estimate",
                                  source=os.path.basename(input_path))
        self._write(out_dir, "rademacher.json", envelope)
        return envelope

    # -- bound -------------------------------------------------------------------

    @staticmethod
    def load_constituents(paths: Sequence[str], defaults: Optional[Dict[str, Any]] = None) -> Tuple[str, Dict[str, Any]]:
        """Merge constituent files; later files override earlier ones."""
        name = None
        merged: Dict[str, Any] = dict(defaults or {})
        for path in paths:
            data = read_json_file(path, CONSTITUENTS_SCHEMA)
            if name is not None and data["bound"] != name:
                raise ConfigError(f"{path} is for bound {data['bound']!r}, expected {name!r}",
                                  {"path": path, "field": "bound"})
            name = data["bound"]
            merged.update(data["constituents"])
        if name is None:
            raise ConfigError("no constituent files given")
        return name, merged

    @staticmethod
    def compute_bound(name: str, raw: Dict[str, Any]) -> List[BoundReport]:
        required, optional = BOUND_CONSTITUENTS[name]
        missing = [k for k in required if k not in raw]
        if missing:
            raise MissingConstituentError(f"bound {name!r} is missing constituent {missing[0]!r}",
                                          {"bound": name, "missing": missing})
        c = {k: parse_constituent(raw[k]) for k in (*required, *optional) if k in raw}
        m = int(c["m"])
        if name == "uniform_restricted":
            return [uniform_restricted_bound(c["emp_err"], c["rad_Ht"], c["rho"], m, c["delta"])]
        if name == "restricted_erm":
            return [restricted_erm_guarantee(c["err_star_t"], c["rad_Ht"], c["rho"], m, c["delta"])]
        if name == "srm_uniform":
            return [srm_uniform_bound(c["emp_err"], c["rad_Ht_k"], c["w_k"], c["rho"], m, c["delta"])]
        if name == "joint":
            err_terms = {k: c[k] for k in ("err_f_star", "err_af_star", "err_g_star") if k in c}
            return list(joint_bounds(err_terms, c["rad_HA"], c["rho"], c["t"], m, c["delta"]).values())
        if name == "regularized":
            return [regularized_bound(c["err_star_t"], c["rho"], c["t"], c["rad_HA"], m, c["delta"],
                                      c.get("epsilon_u"))]
        if name == "lambda_equivalence":
            return [lambda_equivalence_bound(c["rho"], c["rad_HA"], m, c["delta"], c["lambda"],
                                             c.get("epsilon_u"), c.get("w_k"))]
        if name == "stochastic":
            return [stochastic_bound(c["exp_emp_err"], c["exp_sensitivity"], c["exp_rad"], c["rho"], m, c["delta"])]
        if name == "stochastic_fixed_omega":
            return [stochastic_fixed_omega_bound(c["emp_err_omega"], c["sensitivity_omega"], c["rad_omega"],
                                                 c["rho"], m, c["delta"])]
        return [balcan_guarantee_bound(c["err_star_k"], c["rad_Ht_k"], c["w_k"], c["rho"], m, c["delta"])]

    @staticmethod
    def append_bound_rows(reports: Sequence[BoundReport], path: str) -> str:
        rows = [{
            "name": r.name,
            "value": r.value,
            "delta": r.delta,
            "certified": r.certified,
            "inputs_digest": r.inputs_digest,
            "terms": ";".join(f"{label}={value!r}" for label, value in r.terms),
        } for r in reports]
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        pd.DataFrame(rows).to_csv(path, mode="a", header=not os.path.exists(path), index=False,
                                  float_format="%.17g", encoding="utf-8")
        return path

    def bound(self, constituent_paths: Sequence[str], config: Optional[ExperimentConfig] = None,
              out_dir: Optional[str] = None) -> Dict[str, Any]:
        defaults = {"delta": config.delta} if config is not None else {}
        out_dir = out_dir or (config.output_dir if config is not None else None)
        name, raw = self.load_constituents(constituent_paths, defaults)
        if config is not None and config.bounds and name not in config.bounds:
            raise ConfigError(f"bound {name!r} is not among the configured bounds",
                              {"field": "bounds", "bound": name, "selected": config.bounds})
        reports = self.compute_bound(name, raw)
        result = {"bound": name, "reports": [r.to_dict() for r in reports]}
        envelope = self._envelope("bound", result, f"{len(reports)} report(s)",
                                  constituents_digest=inputs_digest(raw))
        if out_dir:
            self._write(out_dir, f"bound_{name}.json", envelope)
            self.append_bound_rows(reports, os.path.join(out_dir, BOUNDS_CSV))
        return envelope

    # -- validate ----------------------------------------------------------------

    def validate(self, suite: str, trials: Optional[int] = None, seed: Optional[int] = None,
                 out_dir: Optional[str] = None, config: Optional[ExperimentConfig] = None) -> Dict[str, Any]:
        """Run a suite; explicit arguments win over the config, which wins over the suite defaults."""
        if config is not None:
            trials = config.trials if trials is None else trials
            seed = config.seed if seed is None else seed
            out_dir = out_dir or config.output_dir
        seed = 0 if seed is None else seed
        report = run_suite(suite, trials=trials, seed=seed, threads=self.threads)
        envelope = self._envelope("validate", report.to_dict(),
                                  "suite passed" if report.passed else "suite failed", suite=suite, seed=seed)
        self._write(out_dir, f"validate_{suite}.json", envelope)
        return envelope


def _tuple(values: Optional[Sequence[float]]) -> Optional[Tuple[float, ...]]:
    return None if values is None else tuple(float(v) for v in values)

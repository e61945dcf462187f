import argparse
from typing import Any, Dict, Tuple

from services.config_loader import ExperimentConfig

Result = Tuple[Dict[str, Any], int]


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        config.raw = {**config.raw, "seed": args.seed}
    return config


def _common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", required=True, help="experiment configuration JSON")
    sub.add_argument("--seed", type=int, help="override the configured root seed")
    sub.add_argument("--out", help="output directory (defaults to output_dir in the config)")
    sub.add_argument("--threads", type=int, help="worker threads (default: APPROX_SENSE_THREADS or 1)")


def register_commands(parser: argparse.ArgumentParser, experiment_runner):
    subparsers = parser.commands

    def train(args) -> Result:
        """Run the configured learner and report its output with empirical and true errors."""
        return experiment_runner.train(_load_config(args), args.out), 0

    def sensitivity(args) -> Result:
        return experiment_runner.sensitivity(_load_config(args), args.out), 0

    def generate(args) -> Result:
        return experiment_runner.generate(_load_config(args), args.out), 0

    def rademacher(args) -> Result:
        """Complexity of a geometry description (.json) or a sensitivity point set (.csv)."""
        seed = 0 if args.seed is None else args.seed
        return experiment_runner.rademacher(args.input, args.method, args.n_sigma, seed, args.absolute, args.out), 0

    def bound(args) -> Result:
        config = ExperimentConfig.load(args.config) if args.config else None
        return experiment_runner.bound(args.constituents, config, args.out), 0

    def validate(args) -> Result:
        config = ExperimentConfig.load(args.config) if args.config else None
        envelope = experiment_runner.validate(args.suite, args.trials, args.seed, args.out, config)
        return envelope, 0 if envelope["result"]["passed"] else 1

    sub = subparsers.add_parser("train", help="run a sensitivity-aware learner")
    _common(sub)
    sub.set_defaults(handler=train)

    sub = subparsers.add_parser("sensitivity", help="estimate the approximation sensitivity of a hypothesis")
    _common(sub)
    sub.set_defaults(handler=sensitivity)

    sub = subparsers.add_parser("generate", help="write synthetic labelled/unlabelled samples as CSV")
    _common(sub)
    sub.set_defaults(handler=generate)

    sub = subparsers.add_parser("rademacher", help="Rademacher complexity of a sensitivity set")
    sub.add_argument("input", help="geometry JSON or point-set CSV")
    sub.add_argument("--method", choices=["auto", "exact", "mc"], default="auto")
    sub.add_argument("--n-sigma", type=int, default=2000, dest="n_sigma")
    sub.add_argument("--absolute", action="store_true", help="use sup |<sigma, v>| instead of sup <sigma, v>")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out")
    sub.add_argument("--threads", type=int)
    sub.set_defaults(handler=rademacher)

    sub = subparsers.add_parser("bound", help="evaluate a generalization bound from constituent files")
    sub.add_argument("constituents", nargs="+", help="constituent JSON files, merged in order")
    sub.add_argument("--config", help="experiment configuration supplying a default delta and output_dir")
    sub.add_argument("--out")
    sub.add_argument("--threads", type=int)
    sub.set_defaults(handler=bound)

    sub = subparsers.add_parser("validate", help="run a validation suite")
    sub.add_argument("suite")
    sub.add_argument("--config", help="experiment configuration supplying trials, seed and output_dir")
    sub.add_argument("--trials", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out")
    sub.add_argument("--threads", type=int)
    sub.set_defaults(handler=validate)

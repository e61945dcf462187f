import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from core.errors import ApproxSenseError
from core.utils import canonical_json, resolve_threads

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="approx-sense",
        description="Sensitivity-aware learning under weight approximation: learners, bounds and validation suites.",
    )
    parser.commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    return parser


def init_commands(parser: argparse.ArgumentParser, experiment_runner):
    from .experiment_commands import register_commands
    register_commands(parser, experiment_runner)


def _emit(payload: Dict[str, Any], stream=None):
    stream = stream or sys.stdout
    stream.write(canonical_json(payload))
    stream.flush()


def dispatch(parser: argparse.ArgumentParser, experiment_runner, argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the chosen command and print its JSON envelope; returns the exit code."""
    args = parser.parse_args(argv)
    experiment_runner.threads = resolve_threads(getattr(args, "threads", None))
    try:
        envelope, exit_code = args.handler(args)
    except ApproxSenseError as e:
        logger.error("%s failed [%s]: %s", args.command, e.code, e.message)
        _emit(e.to_dict(), sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("%s failed with an unexpected error", args.command)
        _emit({"status": {"success": False, "code": "internal", "message": str(e), "details": {}}}, sys.stderr)
        return 1
    _emit(envelope)
    return exit_code


__all__ = ['build_parser', 'init_commands', 'dispatch']

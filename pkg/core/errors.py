from typing import Any, Dict, Optional


class ApproxSenseError(Exception):
    """Base class of every structured error raised by the toolkit.

    Carries a machine-readable ``code`` next to the human message so the CLI
    can emit the same status envelope the services return on success.
    """

    code = "approx_sense_error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": {
                "success": False,
                "code": self.code,
                "message": self.message,
                "details": self.details,
            }
        }


class InvalidParameterError(ApproxSenseError, ValueError):
    code = "invalid_parameter"


class DimensionMismatchError(ApproxSenseError, ValueError):
    code = "dimension_mismatch"


class StochasticOperatorError(ApproxSenseError, ValueError):
    """Raised when a deterministic-only operation receives a stochastic operator."""

    code = "stochastic_operator"

    def __init__(self, message: str = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message or "operator is stochastic; use expected_sensitivity to average over operator draws",
            details,
        )


class DeterministicOperatorError(ApproxSenseError, ValueError):
    code = "deterministic_operator"

    def __init__(self, message: str = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message or "operator is deterministic; use empirical_sensitivity instead",
            details,
        )


class EnumerationLimitError(ApproxSenseError, ValueError):
    code = "enumeration_limit"


class InfeasibleError(ApproxSenseError):
    """No candidate of the search domain satisfies the feasibility predicate."""

    code = "infeasible"

    @property
    def min_sensitivity(self) -> Optional[float]:
        return self.details.get("min_sensitivity")


class IngestionError(ApproxSenseError):
    code = "ingestion"
    exit_code = 2


class ConfigError(ApproxSenseError):
    code = "config"
    exit_code = 2


class UnknownSuiteError(ApproxSenseError):
    code = "unknown_suite"
    exit_code = 2


class MissingConstituentError(ApproxSenseError):
    code = "missing_constituent"
    exit_code = 2


class ReportIntegrityError(ApproxSenseError):
    code = "report_integrity"

"""Error taxonomy shared by every ObstaclePricer module.

Each error carries a stable ``code``, the process ``exit_status`` the CLI
returns for it, and a ``context`` dict with whatever the raising site knew
(node, ratio, residual, time index, violated constraint).
"""
from __future__ import annotations

from typing import Any, Dict


class PricerError(Exception):
    code = "pricer_error"
    exit_status = 3

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context)

    def add_context(self, **context: Any) -> "PricerError":
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def to_record(self) -> Dict[str, Any]:
        return {
            "error": self.code,
            "category": type(self).__mro__[1].__name__,
            "message": self.message,
            "exit_status": self.exit_status,
            "context": {k: _jsonable(v) for k, v in sorted(self.context.items())},
        }

    def __str__(self) -> str:
        if not self.context:
            return self.message
        extra = ", ".join(f"{k}={v!r}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({extra})"


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    if isinstance(value, float):
        return value if value == value and abs(value) != float("inf") else repr(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    try:
        return float(value)
    except (TypeError, ValueError):
        return repr(value)


# Configuration errors (exit 2)

class ConfigError(PricerError):
    code = "config_error"
    exit_status = 2


class ConfigParse(ConfigError):
    code = "config_parse"


class MissingParam(ConfigError):
    code = "missing_param"


class ConstraintViolated(ConfigError):
    code = "constraint_violated"


class UnsupportedModel(ConfigError):
    code = "unsupported_model"


class BadBox(ConfigError):
    code = "bad_box"


class BadSize(ConfigError):
    code = "bad_size"


# Solver errors (exit 3)

class SolverError(PricerError):
    code = "solver_error"
    exit_status = 3


class StencilFailure(SolverError):
    code = "stencil_failure"


class SolveFailure(SolverError):
    code = "solve_failure"


class BadLambda(SolverError):
    code = "bad_lambda"


class BadStep(SolverError):
    code = "bad_step"


class LengthMismatch(SolverError):
    code = "length_mismatch"


class NewtonDiverged(SolverError):
    code = "newton_diverged"


class SingularRegression(SolverError):
    code = "singular_regression"


class NoSolution(SolverError):
    code = "no_solution"


# Certification errors (exit 4)

class CertificationError(PricerError):
    code = "certification_error"
    exit_status = 4


class RatioUnbounded(CertificationError):
    code = "ratio_unbounded"


class NonPositiveDensity(CertificationError):
    code = "nonpositive_density"


class NonMonotoneRow(UserWarning):
    """Assembled rows with positive off-diagonal entries (mixed-derivative stencils)."""


def exit_status_for(exc: BaseException) -> int:
    if isinstance(exc, PricerError):
        return exc.exit_status
    return SolverError.exit_status

"""
errors.py

Exception hierarchy for the lab. Every class carries the process exit code
the command line maps it to.
"""

from typing import Optional

from config import EXIT_CODES


class LabError(Exception):
    """Root of all lab failures."""
    exit_code = 1


class ValidationError(LabError, ValueError):
    """A contract violation: bad parameters, invalid measures, mismatched shapes."""
    exit_code = EXIT_CODES["VALIDATION"]


class ConfigError(ValidationError):
    """Experiment config rejected before any compute; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ConstructionError(ValidationError):
    """An alternative cannot be built inside the requested class."""


class BudgetError(ValidationError):
    """A bit budget is too small for the requested transcript."""


class EnumerationError(ValidationError):
    """An exact computation would enumerate more atoms than allowed."""


class UncalibratedError(LabError, RuntimeError):
    """A protocol was run before its threshold was calibrated."""
    exit_code = EXIT_CODES["NUMERICAL"]


class RegimeError(LabError):
    """Parameters fall outside the regime an experiment is defined for."""
    exit_code = EXIT_CODES["REGIME"]


class BracketError(LabError):
    """The risk curve does not cross the target inside the bracket."""
    exit_code = EXIT_CODES["NUMERICAL"]

    def __init__(
        self,
        message: str,
        risk_lo: Optional[float] = None,
        risk_hi: Optional[float] = None
    ):
        self.risk_lo = risk_lo
        self.risk_hi = risk_hi
        super().__init__(f"{message} (risk_lo={risk_lo}, risk_hi={risk_hi})")

"""Errors raised by the waveform designer."""

from typing import Optional


class WaveformDesignError(Exception):
    """Base class for every error raised by cmwave."""


class DomainError(WaveformDesignError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(WaveformDesignError, ArithmeticError):
    """A non-finite value entered or left a numerical routine."""


class OracleGuardError(DomainError):
    """A brute-force reference was asked for a problem too large to build."""


class ConfigError(WaveformDesignError, ValueError):
    """A run configuration could not be parsed or failed validation."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class SolverDivergedError(WaveformDesignError, RuntimeError):
    """The iteration produced a non-finite state."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class AuditViolation(WaveformDesignError, AssertionError):
    """A convergence audit failed while running in strict mode."""

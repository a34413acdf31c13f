"""
Exception hierarchy for koss-ssm.

ConfigError maps to CLI exit code 2 and NumericalError to exit code 3.
"""
from typing import Optional


class KossError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(KossError, ValueError):
    """Invalid configuration, flag value or precondition."""


class DatasetError(ConfigError):
    """Malformed or unusable dataset file."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class NumericalError(KossError, ArithmeticError):
    """Numerical failure: singular systems, divergence, non-finite values."""


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, condition: float):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3e})")


class DivergenceError(NumericalError):
    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} at t={time:.6g}")


class ConvergenceError(NumericalError):
    def __init__(self, message: str, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} after {iterations} iterations (residual {residual:.3e})")


class NonFiniteError(NumericalError):
    def __init__(self, message: str, where: str):
        self.where = where
        super().__init__(f"{message} at {where}")


class UnsupportedOpError(KossError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"no backward rule for op '{op}'")

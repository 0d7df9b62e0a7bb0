from __future__ import annotations


class RobustCounterfactualsError(Exception):
    """Base class for all errors raised by this package."""


class CapabilityError(RobustCounterfactualsError, NotImplementedError):
    """An expectation engine was asked for an integrand it cannot represent."""


class NumericalError(RobustCounterfactualsError, ArithmeticError):
    """
    Non-finite values appeared where finite ones are required.

    Parameters
    ----------
    message : str
        Human readable description.
    row : int, optional
        Index (in the flattened ``(g1, g2, g3, g4)`` ordering) of the moment
        row that produced the offending value, when known.
    """

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"{message} (moment row {row})"
        super().__init__(message)
        self.row = row


class SingularityError(RobustCounterfactualsError, ArithmeticError):
    """A Jacobian that must have full column rank does not."""


class ConditioningError(RobustCounterfactualsError, ArithmeticError):
    """A matrix that must be positive definite could not be factorised."""


class UnsupportedError(RobustCounterfactualsError, RuntimeError):
    """The requested quantity is not defined at the current solution."""


class EstimationError(RobustCounterfactualsError, RuntimeError):
    """A point estimator failed to converge."""


class ConvergenceError(RobustCounterfactualsError, RuntimeError):
    """A fixed-point iteration exceeded its iteration cap."""


class ConfigError(RobustCounterfactualsError, ValueError):
    """
    A configuration file or value is invalid.

    Parameters
    ----------
    message : str
        Human readable description.
    key : str, optional
        Dotted path of the offending key.
    line : int, optional
        1-based line number in the source file.
    """

    def __init__(
        self, message: str, key: str | None = None, line: int | None = None
    ):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line

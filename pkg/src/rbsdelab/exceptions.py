"""Exception taxonomy shared across the package.

The scenario runner maps these onto its exit-code contract: configuration
problems exit 2, resource and step-size problems exit 3, tolerance failures
exit 1.
"""


class RbsdeLabError(Exception):
    """Base class for package errors."""


class ModelError(RbsdeLabError):
    """Invalid lattice construction or mismatched node data."""


class ConfigError(RbsdeLabError):
    """Malformed scenario or component configuration."""


class StepSizeError(RbsdeLabError):
    """Lipschitz constant times step width is not below one."""


class ConvergenceError(RbsdeLabError):
    """Implicit fixed-point step failed to converge."""


class BudgetError(RbsdeLabError):
    """Enumeration budget exceeded; carries the offending count."""

    def __init__(self, message: str, count: int | None = None):
        super().__init__(message)
        self.count = count


class LipschitzViolationError(RbsdeLabError):
    """Observed difference quotient exceeds the declared constant."""


class PreconditionError(RbsdeLabError):
    """Operation refused because its hypothesis fails; cites the witness."""

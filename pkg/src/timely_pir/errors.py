"""Exception hierarchy shared by the solvers, the oracle and the CLI."""


class TimelyPIRError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfigError(TimelyPIRError, ValueError):
    """Raised when a system configuration violates its invariants."""


class InfeasibleError(TimelyPIRError):
    """Raised when no download allocation satisfies the constraints."""


class DegenerateBranchError(TimelyPIRError):
    """Raised when a closed-form branch does not apply to the given statistics."""


class ConvergenceError(TimelyPIRError):
    """Raised when an iterative search exhausts its budget before its tolerance."""


class SizeLimitError(TimelyPIRError):
    """Raised when an enumeration or grid would exceed its size guard."""

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2,
NumericalError -> 3, RunawayThinningError -> 4.
"""


class NngpcoxError(Exception):
    """Base class for all package errors."""


class ValidationError(NngpcoxError):
    """Bad user input: malformed files, out-of-range values, invalid config."""


class NumericalError(NngpcoxError):
    """Numerical failure: non-SPD covariance, non-finite latent values."""


class RunawayThinningError(NngpcoxError):
    """A thinned-point acceptance loop exceeded its proposal cap."""

    def __init__(self, message, t=None, acceptance_rate=None, iteration=None):
        super().__init__(message)
        self.t = t
        self.acceptance_rate = acceptance_rate
        self.iteration = iteration


class DiagnosticError(NngpcoxError):
    """A chain diagnostic is undefined for the given series."""

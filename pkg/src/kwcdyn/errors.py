"""Exception types shared across the package."""


class KwcError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(KwcError, ValueError):
    """A scalar parameter or coefficient is out of its admissible range."""


class ShapeError(KwcError, ValueError):
    """A field array does not match the mesh it is used with."""


class StepSizeError(KwcError, ValueError):
    """The time step is too large for the implicit step to be well posed."""


class InvalidInitialDataError(KwcError, ValueError):
    """Initial fields violate the required pointwise bounds."""


class InvalidPairingError(KwcError, ValueError):
    """The two runs of a comparison experiment are not compatibly configured."""


class ConvergenceError(KwcError, RuntimeError):
    """An inner solver failed to reach its tolerance.

    Carries the best iterate and residual seen so far; ``run_scheme``
    additionally attaches the partial trajectory.
    """

    def __init__(self, message, best=None, residual=None, partial_trajectory=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.partial_trajectory = partial_trajectory


class OracleError(KwcError, RuntimeError):
    """The dense reference minimizer failed; a test-infrastructure fault."""


class ConfigError(KwcError, ValueError):
    """Config file rejected; ``diagnostics`` lists (key, line, reason) tuples."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])

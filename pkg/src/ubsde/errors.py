"""Exception and warning types shared across the package."""


class UBSDEError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UBSDEError, ValueError):
    """Invalid grid, ensemble, scenario or solver settings."""

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)


class InvalidValueError(UBSDEError, ValueError):
    """Non-finite or otherwise unusable numerical input."""


class ContractViolation(UBSDEError):
    """A caller broke a documented precondition (shapes, adaptedness)."""


class NumericalFailure(UBSDEError, RuntimeError):
    """An iterative procedure did not reach its tolerance.

    ``residual`` holds the best residual seen, ``coords`` the offending
    (alpha, path, node) cell when known, and ``report`` any diagnostics
    collected before giving up.
    """

    def __init__(self, message, residual=None, coords=None, report=None):
        super().__init__(message)
        self.residual = residual
        self.coords = coords
        self.report = report


class DegradedBasisWarning(UserWarning):
    """Regression basis was rank deficient; ridge fallback was used."""


class ProbeWarning(UserWarning):
    """Probed regularity constants disagree with the declared ones."""


class NoiseFloorWarning(UserWarning):
    """Requested tolerance lies below the Monte-Carlo noise floor."""

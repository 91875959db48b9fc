"""Exception hierarchy.

The CLI maps :class:`ConfigurationError` to exit status 2 and every other
:class:`PortalChoiceError` to exit status 1.
"""


class PortalChoiceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PortalChoiceError, ValueError):
    """Invalid parameters, specs, catalogs or edit rules."""


class CatalogError(ConfigurationError):
    """Portal catalog failed validation."""


class DataError(PortalChoiceError, ValueError):
    """Input data violates a contract (non-finite value, coverage gap...)."""


class DomainError(DataError):
    """Operation undefined on the given input (empty set, too few portals...)."""


class NumericalOverflowError(DomainError):
    """Naive exponentiation would overflow; the instance is rejected."""


class CollinearityError(DataError):
    """Design is rank deficient; ``columns`` names the dependent variables."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(DataError):
    """Likelihood is unbounded along some direction of the coefficients."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(DataError):
    """Newton iterations exhausted; ``trace`` holds the gradient norms."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)

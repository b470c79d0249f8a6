"""Exception hierarchy shared across the package."""


class KramersError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(KramersError):
    """Malformed or inconsistent scenario configuration."""


class AssumptionError(KramersError):
    """A model violates the positivity/finiteness requirements on its box."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(KramersError):
    """A numerical routine failed (singular system, non-convergence, ...)."""


class LyapunovError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass

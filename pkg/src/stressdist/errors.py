"""Exception types shared across the package."""


class StressDistError(Exception):
    """Base class for all package errors."""


class GeometryError(StressDistError):
    """Invalid geometric construction or a point outside its chart."""


class FieldError(StressDistError):
    """Invalid field construction (support, smoothness, symmetry)."""


class RankMismatchError(StressDistError):
    """Distribution and test function ranks are incompatible."""


class EvaluationError(StressDistError):
    """Non-finite value met while evaluating an integrand.

    Carries the offending location so the failing node can be inspected.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class ConfigError(StressDistError):
    """Scenario configuration is malformed or incomplete."""

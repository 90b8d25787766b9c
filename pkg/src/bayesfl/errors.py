"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class NumericalFailure(ArithmeticError):
    """An iterative numerical routine did not reach its target tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class CapabilityError(InvalidInputError):
    """The request is valid in principle but outside what the routine supports."""


class DivergenceError(RuntimeError):
    """Training blew up; ``partial`` holds whatever was recorded before it did."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    ``key`` is the dotted path of the offending entry.
    """

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message

class BRCDFError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BRCDFError, ValueError):
    """Invalid experiment configuration. ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(BRCDFError, ArithmeticError):
    """A factorization or solve failed (singular or indefinite matrix)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, last_delta=None, iterations=None):
        self.last_delta = last_delta
        self.iterations = iterations
        super().__init__(message)


class GraphError(BRCDFError, ValueError):
    pass

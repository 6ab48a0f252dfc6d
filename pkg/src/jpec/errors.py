"""Exception types raised across the package."""


class JpecError(Exception):
    """Base class for all package errors."""


class ShapeError(JpecError, ValueError):
    pass


class NormalizationError(JpecError, ValueError):
    pass


class PairError(JpecError, ValueError):
    pass


class GraphValidationError(JpecError, ValueError):
    def __init__(self, issue):
        super().__init__(str(issue))
        self.issue = issue


class InfeasibleError(JpecError, RuntimeError):
    pass


class DivergenceError(JpecError, FloatingPointError):
    def __init__(self, epoch, message):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class FormatError(JpecError, ValueError):
    """Malformed or truncated input file."""

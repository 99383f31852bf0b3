"""Exception types shared across the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """Shapes of the operands do not agree."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class SingularMatrixError(ArithmeticError):
    """LU factorisation met a pivot below the singularity threshold."""


class NumericalFailure(ArithmeticError):
    """An iteration did not converge; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NotControllableError(ValueError):
    def __init__(self, message, rank=None, n=None):
        super().__init__(message)
        self.rank = rank
        self.n = n


class NotObservableError(ValueError):
    def __init__(self, message, rank=None, n=None):
        super().__init__(message)
        self.rank = rank
        self.n = n


class UnsupportedError(ValueError):
    """Requested variant is outside what the implementation covers."""


class TapeStateError(RuntimeError):
    """A gradient tape was reused after its backward pass."""


class TrainingDivergence(RuntimeError):
    """Loss or gradients stopped being finite during training."""


class ConfigError(ValueError):
    """Unknown key or malformed value in a config file or override."""


class ParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"parse error at line {line}: {message}"
        super().__init__(message)
        self.line = line


class InputError(ValueError):
    """Caller-supplied data (tokens, corpus) is unusable."""

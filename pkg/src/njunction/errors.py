"""Exception types shared across the package."""


class NJError(Exception):
    exit_code = 1


class ParameterError(NJError, ValueError):
    exit_code = 2


class ConfigError(ParameterError):
    exit_code = 2


class DomainError(NJError, ValueError):
    exit_code = 2


class HypothesisError(NJError):
    """A potential is not symmetric, or its wells are degenerate or not coercive."""

    exit_code = 2


class ConvergenceError(NJError):
    exit_code = 3

    def __init__(self, message, residual=None, iteration=None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration


class DivergenceError(ConvergenceError):
    pass


class ConstructionError(NJError):
    exit_code = 4


class InsufficientDataError(NJError):
    exit_code = 5


class FormatError(NJError, ValueError):
    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

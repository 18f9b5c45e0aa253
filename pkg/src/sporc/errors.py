"""Exception hierarchy shared across the package."""


class SporcError(Exception):
    pass


class DimMismatch(SporcError, ValueError):
    pass


class ParseError(SporcError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyPart(SporcError, ValueError):
    pass


class Divergence(SporcError, FloatingPointError):
    pass


class InfeasibleError(SporcError):
    """Raised when an optimization problem required to be solvable is not."""


class SolverFailure(SporcError, RuntimeError):
    pass


class AllTruncated(SporcError):
    pass


class ConfigError(SporcError, ValueError):
    pass


class PipelineError(SporcError, RuntimeError):
    pass

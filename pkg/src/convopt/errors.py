"""Exception hierarchy shared by all convopt modules."""


class ConvoptError(Exception):
    pass


class UsageError(ConvoptError, ValueError):
    """Bad arguments or violated preconditions."""


class CoefficientError(ConvoptError, ValueError):
    """A coefficient is non-finite or violates ellipticity."""


class MonotonicityError(CoefficientError):
    """A reaction coefficient is negative."""


class CapabilityError(ConvoptError):
    """A derivative was requested that the nonlinearity does not provide."""


class SolverError(ConvoptError):
    """Linear solve failed; ``diagnostics`` carries pivot/residual details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StateSolveError(ConvoptError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class TruncationActiveError(StateSolveError):
    """Converged truncated iterate reaches the truncation level; retry with larger k."""


class ConfigError(ConvoptError):
    """Config parse error; ``path`` is a JSON pointer."""

    def __init__(self, message, path=""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path


class SemanticError(ConfigError):
    pass

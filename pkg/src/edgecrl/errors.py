"""Exception hierarchy shared across the package."""


class EdgeCRLError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(EdgeCRLError, ValueError):
    pass


class ParameterError(EdgeCRLError, ValueError):
    pass


class TraceFormatError(EdgeCRLError):
    """A trace file could not be parsed or failed validation on load."""


class SchemaVersionError(TraceFormatError):
    def __init__(self, found, expected):
        super().__init__(f"schema version {found!r} is not supported (expected {expected!r})")
        self.found = found
        self.expected = expected


class MetricUndefinedError(EdgeCRLError, ValueError):
    pass


class StaleCacheError(EdgeCRLError):
    pass


class TrainingDivergenceError(EdgeCRLError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

"""Exception hierarchy shared across the package."""


class WavescoreError(Exception):
    """Base class for all package errors."""


class DimensionError(WavescoreError, ValueError):
    pass


class NumericError(WavescoreError, FloatingPointError):
    pass


class ConfigError(WavescoreError, ValueError):
    pass


class GraphError(WavescoreError):
    """Raised when a computation graph cannot be ordered (e.g. it has a cycle)."""


class CheckpointVersionError(WavescoreError):
    def __init__(self, found, supported):
        self.found = found
        self.supported = supported
        super().__init__(
            f"checkpoint format version {found} is not supported "
            f"(this build reads version {supported})"
        )


class IntegrityError(WavescoreError):
    """Checkpoint is truncated or its checksum does not match."""


class SingularModelError(WavescoreError, ZeroDivisionError):
    pass


class UnsupportedModelError(WavescoreError, TypeError):
    pass


class InvariantViolation(WavescoreError, AssertionError):
    pass


class NonConvergenceError(WavescoreError, RuntimeError):
    """Sampler hit its iteration cap; the partial trace is attached."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace

"""Exception types shared across the package."""


class ThickpointError(Exception):
    """Base class for all package errors."""


class NumericalError(ThickpointError):
    """A numerical routine did not reach its requested accuracy."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ConvergenceFailure(NumericalError):
    """Eigensolver residual bound not met; ``index`` is the offending eigenpair."""

    def __init__(self, message, index=None, achieved=None):
        super().__init__(message, achieved)
        self.index = index


class DegenerateWindow(ThickpointError):
    """Too few data points survive windowing to fit a slope."""


class NotNormalized(ThickpointError):
    """A vector that must have unit norm does not."""


class DomainError(ThickpointError, ValueError):
    """Argument outside the mathematical domain of a function."""


class WindowEmpty(ThickpointError):
    """A target window of the weakly-spaced selection contains no point."""

    def __init__(self, level, window=None):
        lo_hi = "" if window is None else f" [{window[0]!r}, {window[1]!r}]"
        super().__init__(f"no input point in target window of level {level}{lo_hi}")
        self.level = level
        self.window = window


class SummabilityViolated(ThickpointError, ValueError):
    """Tail weights b_j = j^(-s/2) are not 2q-summable (s*q <= 1)."""


class WitnessTooShallow(ThickpointError):
    """A spacing witness has fewer levels than a construction needs."""


class ConfigError(ThickpointError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingStage(ThickpointError):
    """A report was requested from a manifest lacking a required stage."""


class VerificationFailure(ThickpointError):
    """A numerical verification check did not pass."""


class EmptyProjection(UserWarning):
    """Spectral projection onto an interval containing no eigenvalue."""


class StageFailure(ThickpointError):
    """A pipeline stage raised; carries the stage name, the cause and the partial manifest."""

    def __init__(self, stage, cause, manifest=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest

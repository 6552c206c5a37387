"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A caller-supplied parameter violates an operation's contract."""


class TravelLimitError(RuntimeError):
    """A commanded stage position lies outside the reachable range."""


class CapabilityError(RuntimeError):
    """A hardware command requires a capability the current setup lacks."""


class TiffFormatError(ValueError):
    """A TIFF stream is malformed; the message names the offending field."""


class ConfigError(ParameterError):
    """A configuration document is invalid; carries per-field diagnostics."""

    def __init__(self, errors: dict[str, str]):
        super().__init__("; ".join(f"{k}: {v}" for k, v in errors.items()))
        self.errors = dict(errors)


class FitDegenerateError(ValueError):
    """Plane fitting was attempted on insufficient or collinear points."""


class GroupNotFoundError(RuntimeError):
    """No correlated tile group of the required size exists at any threshold."""


class WorkflowError(RuntimeError):
    """An action was requested in an acquisition phase where it is invalid."""

    def __init__(self, message: str, phase: str | None = None):
        super().__init__(message)
        self.phase = phase

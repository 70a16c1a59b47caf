"""Exception types shared across the package."""


class MaskcraftError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(MaskcraftError, ValueError):
    """Array shapes (image, mask, grid, box) do not line up."""


class BackendError(MaskcraftError, RuntimeError):
    """A model backend failed: spawn error, dead process, timeout, bad reply."""


class ProtocolError(BackendError):
    """An external backend violated the wire protocol."""


class DegenerateSaliencyError(MaskcraftError, ValueError):
    """A saliency map carries no structure to act on (constant or empty)."""


class UndefinedStatisticError(MaskcraftError, ValueError):
    """A statistic is undefined for the given samples, e.g. zero variance."""


class ConfigError(MaskcraftError, ValueError):
    """A configuration file or flag value is unknown or ill-typed."""


class LatentSearchError(BackendError):
    """Latent optimization aborted mid-run; carries the partial loss trace."""

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = list(partial_trace) if partial_trace is not None else []

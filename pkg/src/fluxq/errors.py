"""Exception hierarchy shared by all fluxq modules."""


class FluxqError(Exception):
    """Base class for every error raised by fluxq."""


class ConfigurationError(FluxqError, ValueError):
    """Invalid user-supplied parameters (grid, register size, potential, ...).

    ``errors`` lists every individual problem when validation aggregates them.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [str(message)]


class GridRangeError(FluxqError, IndexError):
    """A grid coordinate or basis index lies outside the register."""


class InvariantError(FluxqError, RuntimeError):
    """An internal invariant (normalization, unitarity, consistency) was violated."""


class NumericError(FluxqError, ValueError):
    """A non-finite value was produced or supplied."""


class ResourceCapError(FluxqError, MemoryError):
    """The requested register or matrix exceeds the configured size cap."""


class EmptySpectrumError(FluxqError, ValueError):
    """No spectral level survived truncation."""


class SignInconsistencyError(FluxqError):
    """Significant pairwise sign measurements contradict each other.

    Parameters
    ----------
    report : list of dict
        One entry per contradicting edge.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = list(report or [])

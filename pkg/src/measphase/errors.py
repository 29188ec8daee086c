"""Exception hierarchy shared by all modules."""


class MeasPhaseError(Exception):
    """Base class for every error raised by :mod:`measphase`."""


class UndefinedPhaseError(MeasPhaseError):
    """A phase was requested for a vanishing amplitude or overlap."""


class ImpossibleReadoutError(UndefinedPhaseError):
    """The requested readout has zero probability; the state is annihilated."""


class GeodesicUndefinedError(MeasPhaseError):
    """Two Bloch points are antipodal, so the shortest geodesic is not unique."""


class VisibilityZeroError(UndefinedPhaseError):
    """The averaged interference amplitude vanishes; its phase is ill-defined."""


class PhaseUndefinedAtError(UndefinedPhaseError):
    """Phase continuation failed at a specific polar angle."""

    def __init__(self, message: str, theta: float, c: float | None = None):
        super().__init__(message)
        self.theta = theta
        self.c = c


class GridTooCoarseError(MeasPhaseError):
    """A lattice plaquette carries too much Berry flux to be resolved."""


class SearchError(MeasPhaseError):
    """Root bracketing or a critical-point search failed."""


class NoCriticalPointError(SearchError):
    """The visibility minimum inside the search box is not a zero."""


class EnumerationTooLargeError(MeasPhaseError, ValueError):
    """Exhaustive enumeration was requested for too many steps."""

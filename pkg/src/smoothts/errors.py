"""Exception types raised across the package."""


class SmoothTSError(Exception):
    """Base class for package errors."""


class CoarseGridError(SmoothTSError):
    """The grid cannot resolve the requested derivative order or tolerance."""


class PriorInfeasibleError(SmoothTSError):
    """Prior parameters are incompatible with the function class."""


class GridMismatchError(SmoothTSError):
    """Two grid functions live on different grids."""


class OutOfRangeError(SmoothTSError):
    """A construction does not fit inside [0, 1] or the allowed value range."""


class ConstructionError(SmoothTSError):
    """A numerical construction (root find, LP) failed."""


class EdgeCaseError(SmoothTSError):
    """A point is too close to the boundary for the requested construction."""


class PreconditionError(SmoothTSError):
    """Parameters violate the preconditions of a bound."""


class DegenerateEnsembleError(SmoothTSError):
    """A particle ensemble has no usable weight."""


class FitError(SmoothTSError):
    """A regression cannot be carried out on the supplied curve."""

"""Exception hierarchy shared by every module of the package."""


class CurvDimError(Exception):
    """Base class for all errors raised by curvdim."""


class DomainError(CurvDimError, ValueError):
    """An argument lies outside the domain of a function."""


class EmptySetError(CurvDimError, ValueError):
    """An operation needs a nonempty cell set."""


class GeodesicError(CurvDimError):
    """The geodesic between two points is not unique."""


class ResourceError(CurvDimError):
    """A configured size cap (cells, atoms) would be exceeded."""


class MeasureError(CurvDimError, ValueError):
    """A measure violates a structural requirement (mass, overlap, alignment)."""


class ResolutionError(CurvDimError, ValueError):
    """A requested scale is finer than the grid can represent."""


class PlanError(CurvDimError, ValueError):
    """A transport plan lacks a property an operation relies on."""

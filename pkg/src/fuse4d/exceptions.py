"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid geometric input (bad intrinsics, non-positive scale, infinite points)."""


class DegenerateGeometryError(GeometryError):
    """Input admits no unique solution (parallel rays, collinear points, rank loss)."""


class WindowError(ValueError):
    """Invalid sliding-window construction or disconnected window graph."""


class EstimationError(RuntimeError):
    """A robust estimator ran but could not produce an acceptable solution."""


class OptimizationError(RuntimeError):
    """The alignment optimizer hit a non-finite loss or invalid configuration."""


class BundleError(ValueError):
    """Malformed or unsupported on-disk scene bundle."""

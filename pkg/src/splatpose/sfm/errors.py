"""Failure taxonomy for the sparse reconstruction stage.

Every error raised on a geometric precondition or an unrecoverable estimation
failure derives from SfmError so callers can fence off the whole stage with a
single except clause while tests still pin the precise subtype.
"""


class SfmError(RuntimeError):
    """Base class for reconstruction failures."""


class InsufficientDataError(SfmError):
    """Fewer correspondences or observations than the solver needs."""


class RansacFailureError(SfmError):
    """No sampled model reached the required consensus."""


class DegenerateGeometryError(SfmError):
    """Input configuration does not constrain the model (planar scene,
    pure rotation, collinear points, rank-deficient system)."""


class LowParallaxError(SfmError):
    """Viewing rays are too close to parallel to triangulate."""


class CheiralityError(SfmError):
    """Triangulated geometry lands behind a camera."""


class BundleFailureError(SfmError):
    """Bundle adjustment could not solve its normal equations."""


class InitializationError(SfmError):
    """Incremental reconstruction could not register enough views."""

    def __init__(self, message: str, unregistered=()):
        super().__init__(message)
        self.unregistered = tuple(unregistered)

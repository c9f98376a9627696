"""Exception types shared across the package."""


class Sl4SlamError(Exception):
    """Base class for all package-specific errors."""


class LogDomainError(Sl4SlamError):
    """Matrix logarithm undefined or outside the principal branch.

    Raised when an eigenvalue lies on the closed negative real axis or the
    inverse-scaling square-root iteration fails to converge. In the backend
    this signals a transform too far from identity for the residual model.
    """


class DegenerateConfiguration(Sl4SlamError):
    """Point set too degenerate (collinear/coincident) to fix a transform."""


class DegenerateSample(Sl4SlamError):
    """A minimal or refit solve produced no usable projective transform."""


class PointAtInfinity(Sl4SlamError):
    """Homogeneous w-component vanished while dehomogenizing a point."""


class InsufficientInliers(Sl4SlamError):
    """Robust estimation failed to find a support of at least five points."""


class ZeroScale(Sl4SlamError):
    """Median scale ratio underflowed; the source cloud is collapsed."""


class SingularNormalEquations(Sl4SlamError):
    """Normal equations not solvable; the gauge is under-constrained."""


class EmptySubmap(Sl4SlamError):
    """Every point of a submap was pruned by the confidence filter."""


class NoSharedFrame(Sl4SlamError):
    """Two submaps do not share the requested frame."""


class TooFewPoints(Sl4SlamError):
    """Fewer than five jointly valid correspondences on a shared frame."""


class DisconnectedGraph(Sl4SlamError):
    """A submap is unreachable from the anchor through factors."""


class LengthMismatch(Sl4SlamError):
    """Trajectories to compare are not frame-by-frame matched."""


class EmptyCloud(Sl4SlamError):
    """A point cloud required for metric evaluation is empty."""


class SessionFormatError(Sl4SlamError):
    """A session directory or one of its files is malformed."""

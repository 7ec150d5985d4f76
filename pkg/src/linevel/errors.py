"""Exception types raised by the estimation pipeline."""


class LinevelError(Exception):
    """Base class for all library-specific errors."""


class DegenerateLine(LinevelError):
    """Line through the projection origin (zero moment); no image line."""


class LineAtInfinity(LinevelError):
    """Orthonormal representation with w2 = 0 has no finite Pluecker form."""


class DegeneratePair(LinevelError):
    """Two events too close in the image to define a line."""


class DegenerateSystem(LinevelError):
    """Stacked velocity constraints have rank < 2 (aperture problem)."""


class RankDefect(LinevelError):
    """Minimal line solver null space is not two-dimensional."""


class NoRealSolution(LinevelError):
    """Line solver constraint polynomial has no real root."""


class OnlySpuriousSolutions(LinevelError):
    """All minimal-solver candidates coincide with the motion line."""


class UndefinedNormal(LinevelError):
    """Bearing parallel to the line direction; inlier metric undefined."""


class InsufficientSpread(LinevelError):
    """Cluster events do not cover the required sampling windows."""


class TooFewClusters(LinevelError):
    """Velocity bootstrap needs at least two clusters."""


class NoModel(LinevelError):
    """Inner RANSAC produced no valid line hypothesis."""


class NoImuData(LinevelError):
    """No inertial samples cover the requested interval."""


class DegenerateProjection(LinevelError):
    """Projected line has no finite direction on the image plane."""


class TriangulationDegenerate(LinevelError):
    """Observation planes are parallel; no unique intersection line."""


class UnobservableScale(LinevelError):
    """No metric excitation; scale cannot be recovered."""


class UndefinedAngle(LinevelError):
    """Angular metric requested for a zero-length vector."""


class UndefinedRelative(LinevelError):
    """Relative error requested for zero ground truth."""


class InvisibleLine(LinevelError):
    """Sampled line never projects into the image over the interval."""

"""Exception hierarchy shared by every attreach module."""

from __future__ import annotations


class AttReachError(Exception):
    """Base class for all library errors."""


class NotSkew(AttReachError, ValueError):
    """Matrix handed to ``vee`` is not skew-symmetric."""


class AngleAtPi(AttReachError, ValueError):
    """Rotation angle is (numerically) pi; the principal log is ambiguous."""


class TooFarFromGroup(AttReachError, ValueError):
    """Matrix is too far from SO(3) to be repaired by projection."""


class ShootingDiverged(AttReachError, RuntimeError):
    """Geodesic boundary-value solve failed to converge."""


class ShootingRadiusExceeded(ShootingDiverged):
    """Endpoints are farther apart than the configured shooting radius."""


class TooManyVertices(AttReachError, ValueError):
    """Vertex enumeration of an interval region exceeds the configured cap."""


class SolverFailure(AttReachError, RuntimeError):
    """SDP backend broke down numerically (distinct from infeasibility)."""


class NoFeasibleRate(AttReachError, RuntimeError):
    """No contraction rate on the line-search grid admits a certificate.

    Attributes:
        step: index of the reachability step that failed (None outside conreach).
        partial: the partial ReachResult accumulated before the failure, if any.
    """

    def __init__(self, message: str, step: int | None = None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


class TubeBoundDiverged(AttReachError, RuntimeError):
    """Picard inflation found no self-consistent enclosure box."""

    def __init__(self, message: str, step: int | None = None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


class OutsideChartDomain(AttReachError, ValueError):
    """Rotation lies outside the domain of the requested exp-atlas chart."""


class OutOfRange(AttReachError, ValueError):
    """Chart coordinates fall outside the open ball of radius pi."""


class ChartBoundaryHit(AttReachError, RuntimeError):
    """A chart-side integration came too close to the chart boundary."""


class BallStraddlesCharts(AttReachError, RuntimeError):
    """A metric ball does not fit inside a single exp-atlas chart."""

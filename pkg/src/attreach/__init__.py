"""Reachable-set over-approximation for rigid-body attitude systems via contraction metrics."""

__version__ = "0.1.0"

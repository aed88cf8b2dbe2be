"""Decentralized multi-agent B-spline trajectory planning and simulation."""

from swarmplan.bspline import BSplineTrajectory, DomainError, basis_matrix, fit_trajectory

__all__ = [
    "BSplineTrajectory",
    "DomainError",
    "basis_matrix",
    "fit_trajectory",
]

__version__ = "0.1.0"

"""Numerical checks of curvature-dimension inequalities on discretized model spaces."""

__version__ = "0.1.0"

"""Numerical checks of deviation inequalities for convex functions of a Gaussian vector."""

__version__ = "0.1.0"

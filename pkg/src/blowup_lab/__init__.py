"""Numerical lab for a two-dimensional semilinear heat blow-up construction."""

__version__ = "0.1.0"

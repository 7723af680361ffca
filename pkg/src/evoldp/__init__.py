"""Finite-population evolutionary game dynamics and their large deviations."""

__version__ = "0.1.0"

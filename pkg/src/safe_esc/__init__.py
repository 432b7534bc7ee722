"""Extremum seeking with logarithmic-barrier safety: simulation and checks."""

__version__ = "0.1.0"

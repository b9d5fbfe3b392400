"""Integral functionals driven by families of vector fields, on grids."""

__version__ = "0.1.0"

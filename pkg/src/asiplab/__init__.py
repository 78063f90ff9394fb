"""Numerical laboratory for limit laws of hyperbolic systems with singularities."""
__version__ = "0.1.0"

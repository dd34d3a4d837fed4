"""Deformed Wigner matrices: free convolution, CLT limits and Monte Carlo checks."""

__version__ = "0.1.0"

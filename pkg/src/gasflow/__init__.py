"""Numerical toolkit for asymptotically stable vector fields and their Lyapunov functions."""

__version__ = "0.1.0"

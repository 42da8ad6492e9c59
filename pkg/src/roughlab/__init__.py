"""Numerical laboratory for one-dimensional rough-path calculus."""

__version__ = "0.1.0"

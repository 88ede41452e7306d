"""Numerical laboratory for random walks in balanced i.i.d. random environments."""

__version__ = "0.1.0"

"""Numerical laboratory for G-expectations and G-backward SDEs."""

__version__ = "0.1.0"

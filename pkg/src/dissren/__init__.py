"""Dissipative renormalization of a two-level atom in a continuous-mode field."""

__version__ = "0.1.0"

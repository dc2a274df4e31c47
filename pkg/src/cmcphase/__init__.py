"""Numerical workbench for Delaunay unduloids and phase-transition layers along them."""

__version__ = "0.1.0"

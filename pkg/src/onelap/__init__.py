"""Solver laboratory for Dirichlet problems driven by the 1-Laplacian."""

__version__ = "0.1.0"

"""Numerical laboratory for Kantorovich h-cost estimates between Fokker-Planck-Kolmogorov flows."""

__version__ = "0.1.0"

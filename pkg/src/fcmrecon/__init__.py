"""Curvature-matched diffusion posterior sampling for colored point clouds."""

__version__ = "0.1.0"

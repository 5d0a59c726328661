"""Diffusion-guided multi-arm motion planning on planar revolute arms."""

__version__ = "0.1.0"

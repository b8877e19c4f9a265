"""Diffusion-sampled B-spline local planning with a geometric critic, at desk scale."""

__version__ = "0.1.0"

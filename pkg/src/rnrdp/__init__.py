"""Noise-relaying diffusion policy at desk scale."""

__version__ = "0.1.0"

"""Planar inverse kinematics by conditional denoising diffusion."""

__version__ = "0.1.0"

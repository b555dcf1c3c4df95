"""Desk-scale blind face restoration with a latent diffusion prior and a control adapter."""

__version__ = "0.1.0"

"""Spatial GEV latent Gaussian model with SPDE random effects."""

__version__ = "0.1.0"

"""Gradient estimators for categorical latent variables."""
__version__ = "0.1.0"

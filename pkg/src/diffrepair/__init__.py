"""Latent code diffusion for last-mile repair of spreadsheet formulas."""

__version__ = "0.1.0"

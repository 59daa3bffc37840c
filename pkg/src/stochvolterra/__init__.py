"""Spectral simulation and verification of stochastic linear Volterra convolutions."""

__version__ = "0.1.0"

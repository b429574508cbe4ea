"""Spectral laboratory for the rotating compressible Navier-Stokes system."""

__version__ = "0.1.0"

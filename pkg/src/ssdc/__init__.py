"""Spectral decoupling + spatial-spectral coupling toy detection pipeline."""

__version__ = "0.1.0"

"""Censored-shifted-gamma EMOS calibration and verification toolkit."""

__version__ = "0.1.0"

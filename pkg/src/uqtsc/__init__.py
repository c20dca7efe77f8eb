"""Uncertainty-aware terrain classification from proprioceptive time series."""

__version__ = "0.1.0"

"""Ideal free dispersal in heterogeneous, time-periodic habitats."""

__version__ = "0.1.0"

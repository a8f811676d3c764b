"""Trainable correlated-photon illumination simulator and training toolkit."""

__version__ = "0.1.0"

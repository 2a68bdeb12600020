"""Spectral-gap analysis of Jackson networks with unreliable nodes."""

__version__ = "0.1.0"

"""Persistent congestion in FAST-TCP: equilibrium model, packet simulator and remedies."""

__version__ = "0.1.0"

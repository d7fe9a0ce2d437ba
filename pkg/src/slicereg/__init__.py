"""Rigid slice-in-volume registration by rotation invariant 2D/3D patch matching."""

__version__ = "0.1.0"

"""Subsonic Euler flow past a thin cusped airfoil with a free slip line."""

__version__ = "0.1.0"

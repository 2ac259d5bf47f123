"""Marked spatiotemporal point processes with moderate and extreme marks."""

__version__ = "0.1.0"

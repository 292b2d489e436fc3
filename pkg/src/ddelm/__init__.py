"""Nonoverlapping domain decomposition for extreme learning machines."""

__version__ = "0.1.0"

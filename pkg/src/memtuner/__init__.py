"""Desk-scale lab for learning memory mechanisms from demonstrations."""

__version__ = "0.1.0"

"""Dialogue-based medication recommendation toolkit."""

__version__ = "0.1.0"

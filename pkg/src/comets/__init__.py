"""Coordinated multi-destination video rate adaptation toolkit."""

__version__ = "0.1.0"

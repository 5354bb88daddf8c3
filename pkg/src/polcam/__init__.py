"""Polarization event camera simulator and reconstruction toolkit."""

__version__ = "0.1.0"

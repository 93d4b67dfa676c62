"""Measurement toolkit and loopback emulator for two-hop privacy relay networks."""

__version__ = "0.1.0"

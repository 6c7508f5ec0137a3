"""Euler--Maruyama fluctuations for SDEs with irregular drift."""

__version__ = "0.1.0"

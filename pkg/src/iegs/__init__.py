"""Distributed optimal energy flow for integrated electricity-gas systems."""

__version__ = "0.1.0"

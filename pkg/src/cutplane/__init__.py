"""Cutting-plane optimization with maintained leverage scores."""

__version__ = "0.1.0"

"""Flexibility scheduling in multi-carrier energy systems under three coordination schemes."""

__version__ = "0.1.0"

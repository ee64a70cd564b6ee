"""Mobility trace quality assessment, visit extraction, and visit-type analytics."""

__version__ = "0.1.0"

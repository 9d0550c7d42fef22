"""Desk-scale laboratory for robust out-of-distribution detection."""

__version__ = "0.1.0"

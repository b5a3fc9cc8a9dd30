"""Deterministic desk-scale oval-racing autonomy stack simulator."""

__version__ = "0.1.0"

"""Desk-scale active speech enhancement testbed."""

__version__ = "0.1.0"

"""Desk-scale harness for probing mining-ASIC timing dynamics as a reservoir substrate."""

__version__ = "0.1.0"

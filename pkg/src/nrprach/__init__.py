"""5G NR PRACH link-level simulator with correlation and neural-network receivers."""

__version__ = "0.1.0"

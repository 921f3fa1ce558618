"""Blockchain-backed tamper-proof storage and authentication for drone networks."""

__version__ = "0.1.0"

"""Federated learning runtime with simulation/deployment parity."""

__version__ = "0.1.0"

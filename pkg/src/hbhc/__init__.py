"""Heartbeat-bound hierarchical credentials with bounded revocation windows."""

__version__ = "0.1.0"

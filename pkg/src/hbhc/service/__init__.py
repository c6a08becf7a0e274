"""HTTP verifier service."""

"""Tri-arm desk manipulation: simulator, instruction stack, meta-RL, service."""

__version__ = "0.1.0"

"""Attention-based multi-agent slice management for O-RAN style downlink cells."""

__version__ = "0.1.0"

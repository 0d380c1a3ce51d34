"""Ranking/sorting losses, certainty maps and edge-detection evaluation."""

__version__ = "0.1.0"

"""Hybrid deep-learning + rule-based multi-agent drone navigation simulator."""

__version__ = "0.1.0"

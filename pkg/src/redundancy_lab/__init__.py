"""Exact and simulated analysis of redundancy scheduling with cancel-on-completion."""

__version__ = "0.1.0"

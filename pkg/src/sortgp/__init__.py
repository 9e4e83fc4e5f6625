"""Evolving tree-structured sorting programs and measuring how rare they are."""

__version__ = "0.1.0"

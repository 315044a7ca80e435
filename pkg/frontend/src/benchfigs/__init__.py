"""Benchmark figure rendering."""

__version__ = "0.1.0"

"""Numerical and I/O helpers -- banded solves, document loading, run summaries."""

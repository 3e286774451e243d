"""Cellular RAN delay simulator, delay compensation pipeline and delay-based congestion controllers."""

__version__ = "0.1.0"

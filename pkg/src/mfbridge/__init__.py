"""Nonatomic sequential games on finite spaces, checked against their n-player versions."""

__version__ = "0.1.0"

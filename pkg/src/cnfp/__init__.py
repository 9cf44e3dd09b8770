"""Constrained normalizing flow policies for safe soft actor-critic."""

__version__ = "0.1.0"

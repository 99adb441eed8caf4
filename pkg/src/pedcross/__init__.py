"""Pedestrian crossing-state classification (C / NC / LONG) from a single 2D pose."""

__version__ = "0.1.0"

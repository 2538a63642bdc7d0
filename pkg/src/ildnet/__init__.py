"""Holistic multi-label recognition of lung texture patterns on CT-like slices."""

__version__ = "0.1.0"

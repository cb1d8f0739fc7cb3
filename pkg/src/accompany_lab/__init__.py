"""Accompanying infinitely divisible laws, polyhedral distances and the
experiments that compare them."""

__version__ = "0.1.0"

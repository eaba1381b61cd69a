"""Charted adversarial generative models for data near low-dimensional manifolds."""

__version__ = "0.1.0"

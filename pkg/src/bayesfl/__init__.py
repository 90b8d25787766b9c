"""Bayesian aggregation of one-bit gradients over fading wireless links."""

__version__ = "0.1.0"

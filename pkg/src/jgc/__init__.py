"""Granger causality from input Jacobians of gated neural networks."""

__version__ = "0.1.0"

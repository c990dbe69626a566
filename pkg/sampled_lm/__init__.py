"""Sampling-based training criteria for large-vocabulary language models."""

__version__ = "1.0.0"

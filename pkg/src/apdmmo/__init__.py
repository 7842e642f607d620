"""Surrogate-guided peak detection for multimodal optimization."""

__version__ = "0.1.0"

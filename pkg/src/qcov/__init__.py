"""Covariance estimation from one-bit and dithered two-bit quantized samples."""

__version__ = "0.1.0"

"""Desk-scale Gaussian splatting with dual-model self-ensembling training."""

__version__ = "0.1.0"

"""Stylized score distillation on a desk-scale toy diffusion model."""

__version__ = "0.1.0"

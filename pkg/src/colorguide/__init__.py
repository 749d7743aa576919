"""Calibrated color guidance for diffusion sampling, checked against an analytic oracle."""

__version__ = "0.1.0"

"""Objective-perturbation GLM training with per-instance privacy accounting and reports."""

__version__ = "0.1.0"

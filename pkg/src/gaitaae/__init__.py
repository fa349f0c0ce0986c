"""Gait normality scoring from depth point clouds with an adversarial auto-encoder."""

__version__ = "0.1.0"

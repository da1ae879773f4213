"""Differentiable architecture search with Beta-Decay and weight flooding
regularization, at desk scale."""

__version__ = "0.1.0"

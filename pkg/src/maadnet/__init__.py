"""Attention-based adversarial domain adaptation for a center-point leaf detector."""

__version__ = "0.1.0"

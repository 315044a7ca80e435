"""Constructive approximation of Besov functions on manifolds with
residual convolutional networks, plus capacity-bound evaluators and a
desk-scale regression benchmark."""

__version__ = "0.1.0"

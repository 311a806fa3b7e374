"""Bilevel hyperparameter tuning through lower-level duality and majorization-minimization"""

__version__ = '0.1.0'

"""Uncertainty quantification for sensor-pen character classifiers."""

__version__ = "0.1.0"

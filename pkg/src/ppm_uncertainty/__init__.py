"""Uncertainty-aware remaining-time and outcome prediction for process event logs."""

__version__ = "0.1.0"

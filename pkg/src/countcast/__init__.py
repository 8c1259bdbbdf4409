"""Bayesian forecasting of many intermittent count series."""

__version__ = "0.1.0"

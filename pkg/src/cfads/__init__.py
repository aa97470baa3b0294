"""Counterfactual analysis toolkit for a simulated ad placement system."""

__version__ = "0.1.0"

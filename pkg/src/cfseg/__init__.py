"""Counterfactual-first anatomical segmentation on a synthetic causal benchmark."""

__version__ = "0.1.0"

"""Haptic in-hand pose estimation and model-predictive manipulation for a two-finger underactuated hand."""

__version__ = "0.1.0"

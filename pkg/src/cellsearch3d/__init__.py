"""Differentiable cell search and patch-based training for multimodal volumetric segmentation."""

__version__ = "0.1.0"

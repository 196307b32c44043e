"""Unsupervised image segmentation from diffusion-model feature modulation."""

__version__ = "0.1.0"

"""Segmentation-free license plate recognition with a numpy CNN+RNN."""

__version__ = "0.1.0"

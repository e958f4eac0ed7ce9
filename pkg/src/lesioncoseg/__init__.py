"""Weakly-supervised lesion co-segmentation from RECIST diameters."""

__version__ = "0.1.0"

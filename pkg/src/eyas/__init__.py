"""Fundus image analysis: localization, segmentation, classification, reporting."""

__version__ = "0.1.0"

"""Labeling-free day-to-night augmentation pipeline for nighttime vehicle detection."""

__version__ = "0.1.0"

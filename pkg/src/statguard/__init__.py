"""Witness-based detection of machine-generated text with empirical-null calibration."""

__version__ = "0.1.0"

"""Spatio-temporal real-estate appraisal."""

__version__ = "0.1.0"

"""Differentially private synthetic instruction curation toolkit."""

__version__ = "0.1.0"

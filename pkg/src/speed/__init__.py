"""Scalable EEG preprocessing for large self-supervised learning corpora."""

__version__ = "0.1.0"

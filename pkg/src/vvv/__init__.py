"""Vaulted voice verification: privacy-preserving challenge-response
speaker verification with GMM phrase models and chaff-paired sealed blocks."""

__version__ = "0.1.0"

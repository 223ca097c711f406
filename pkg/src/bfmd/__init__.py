"""Badminton shot captioning: annotations, tactics, data pipeline, model, metrics."""

__version__ = "0.1.0"

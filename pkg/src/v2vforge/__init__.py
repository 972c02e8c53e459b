"""Paired-data synthesis for instruction-driven video editing, plus a small trainable editor."""

__version__ = "0.1.0"

"""Evaluation harness for mechanistic DILI hypothesis generators."""

__version__ = "0.1.0"

"""Cover-based distributed state observers for sparse interconnected systems."""

__version__ = "0.1.0"

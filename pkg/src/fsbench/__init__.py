"""Feature-selection benchmark engine for small CTR models."""

__version__ = "0.1.0"

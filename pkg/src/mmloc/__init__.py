"""Single-BS mmWave positioning and mapping toolkit."""

__version__ = "0.1.0"

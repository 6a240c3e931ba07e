"""Desk-scale multilingual encoder-decoder toolkit with language-specific layers."""

__version__ = "0.1.0"

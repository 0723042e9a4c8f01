"""Type checker and bounded attack simulator for web-session integrity models."""

__version__ = "0.1.0"

"""Pavement surface reconstruction and distress metrology from RGB-D frames."""

__version__ = "0.1.0"

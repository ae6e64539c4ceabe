"""Downlink CSI prediction by RF radiance-field rendering."""
__version__ = "0.1.0"

"""Spectral laboratory for Ricci flow and the complex Monge-Ampere flow on tori."""

__version__ = "0.1.0"

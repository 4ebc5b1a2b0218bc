"""Cosserat rod simulation and boundary observers for continuum robots."""
from .version import __version__

__all__ = ["__version__"]

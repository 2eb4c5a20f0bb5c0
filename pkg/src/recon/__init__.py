"""Latent-goal exploration with a topological memory on a 2D ray-scan simulator."""
__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]

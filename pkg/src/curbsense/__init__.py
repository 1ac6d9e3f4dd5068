"""Sidewalk accessibility estimation from wheelchair accelerometer signals."""

from curbsense._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

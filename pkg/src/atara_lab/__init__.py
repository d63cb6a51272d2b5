"""Synthetic task-agnostic action generation and arm-decoupled inverse dynamics."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

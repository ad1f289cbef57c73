"""Deterministic simulator of the IDT cache-state side channel and its experiments."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

"""Diagonal state-space sequence policies and numerical stability lab."""

from ssmrl.backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"

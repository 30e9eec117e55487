"""Spectral toolkit for Robin Laplacians on non-isotropic peak domains."""

from __future__ import annotations

__version__ = "0.1.0"

"""Coefficient inversion for the diffusive SIR system."""
from __future__ import annotations

__version__ = "0.3.0"

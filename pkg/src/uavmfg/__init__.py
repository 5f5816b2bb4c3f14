"""Steady macroscopic UAV traffic in 3D wind: value, velocity and density fields."""

from __future__ import annotations

__version__ = "0.1.0"

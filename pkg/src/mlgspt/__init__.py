"""Geometric singular perturbation toolkit for a three-timescale coupled
Morris-Lecar model."""

__version__ = "0.1.0"

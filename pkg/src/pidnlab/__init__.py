"""Noisy VQA laboratory: density-matrix simulation, ZNE, and a trajectory surrogate."""

__version__ = "0.1.0"

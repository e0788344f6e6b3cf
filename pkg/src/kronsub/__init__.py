"""Kronecker-structured subspace models: geometry, error bounds, ML
classification and discriminative dictionary learning for 2-D signals."""

__version__ = "0.1.0"

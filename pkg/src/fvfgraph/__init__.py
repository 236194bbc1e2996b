"""Finite volume features and geometric node features for mesh-based graph networks."""

__version__ = "0.1.0"

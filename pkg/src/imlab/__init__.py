"""Invariant-measure experiments for Galerkin-truncated conservative fluid models."""

__version__ = "0.1.0"

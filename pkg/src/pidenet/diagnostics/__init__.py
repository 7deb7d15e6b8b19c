"""Spectral diagnostics and the cost model."""

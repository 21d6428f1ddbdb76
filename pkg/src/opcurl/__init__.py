"""Physics-informed spectral operator learning at desk scale."""

__version__ = "0.1.0"

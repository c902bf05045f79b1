"""pdemts: equation discovery and physics-constrained forecasting for
multivariate time series."""

__version__ = "0.1.0"

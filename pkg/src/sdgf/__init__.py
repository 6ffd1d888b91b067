"""Static-dynamic graph fusion forecasting for multivariate time series."""

__version__ = "0.1.0"

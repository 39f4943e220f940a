"""Cross-series attention forecasting for epidemic incidence data."""

__version__ = "0.1.0"

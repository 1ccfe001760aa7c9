"""Recurrent reconstruction and forecasting of dynamical-system data."""

__version__ = "1.0.0"

"""Hybrid quantum-classical time-series forecasting on a numpy statevector simulator."""

__version__ = "0.1.0"

"""Exact Gaussian-process regression for battery capacity-fade forecasting."""

from capgp.version import __version__

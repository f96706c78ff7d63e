"""Stochastic homogenization of obstacle problems in randomly perforated domains."""

__version__ = "0.1.0"

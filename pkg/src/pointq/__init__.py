"""Calibration, identifiability analysis, diversion LPs and queueing simulation for signalized arterials."""

__version__ = "0.1.0"

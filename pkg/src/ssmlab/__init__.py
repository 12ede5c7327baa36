"""Simulation and certification toolkit for continuous-time selective state-space models."""

__version__ = "0.1.0"

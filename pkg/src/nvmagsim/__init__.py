"""Simulation and analysis toolkit for pulsed NV-ensemble magnetometry."""

__version__ = "0.1.0"

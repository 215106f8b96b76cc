"""Predictive deployment of UAV base stations for aerial cellular traffic."""

__version__ = "0.1.0"

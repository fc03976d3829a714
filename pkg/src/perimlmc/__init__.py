"""Multilevel Monte Carlo for peridynamic three-point bending of concrete."""

__version__ = "0.1.0"

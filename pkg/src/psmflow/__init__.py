"""Coupled lattice Boltzmann / partially saturated cells / DEM simulator."""

__version__ = "0.1.0"

"""Simulation and numerical checks for singular hyperbolic attractors of
maps on the square."""

__version__ = "0.1.0"

"""Simulation and measurement toolkit for the membrane model and the
discrete Gaussian free field on lattice boxes."""

__version__ = "0.1.0"

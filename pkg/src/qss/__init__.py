"""Simulation and networked harness for three-party quantum secret sharing."""

__version__ = "0.1.0"

"""Electrostatics-elasticity coupling for a flexible molecule in ionic solvent."""

__version__ = "0.1.0"

"""Layered reclaimed-timber assemblies: design, modularization, allocation and adaptive fabrication."""

__version__ = "0.1.0"

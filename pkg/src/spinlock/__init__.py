"""Simulated spin-locking noise spectroscopy for a driven flux qubit."""

__version__ = "0.1.0"

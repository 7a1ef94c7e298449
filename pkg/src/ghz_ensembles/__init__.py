"""Simulation and closed-form analysis of GHZ entanglement generation among
atomic ensembles by pairwise preparation, connection and postselection."""

__version__ = "0.1.0"

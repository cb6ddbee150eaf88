"""Behavioral simulator for compute-in-memory neural-network accelerators."""

__version__ = "0.1.0"

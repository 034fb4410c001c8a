"""Simulation and benchmark harness for an information-gain grasping viewpoint controller."""

__version__ = "0.1.0"

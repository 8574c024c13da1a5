"""Distributed inertial shallow-water flood simulator with a scaling benchmark harness."""

__version__ = "0.1.0"

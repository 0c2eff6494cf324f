"""Inertial navigation as a linear time-varying system with a Kalman observer."""

__version__ = "0.1.0"

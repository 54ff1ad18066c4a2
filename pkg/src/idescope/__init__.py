"""Nonautonomous difference and integrodifference equations: simulation,
limit sets and attractor fibres on point clouds."""

__version__ = "0.1.0"

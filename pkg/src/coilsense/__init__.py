"""Inductance-based force and displacement self-sensing for coiled
pneumatic actuators: parametric sensor model, identification, hybrid
EKF-plus-optimization observer, synthetic hysteretic plant, and
closed-loop tracking harness."""

__version__ = "0.1.0"

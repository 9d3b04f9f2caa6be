"""Geometric attitude control on SO(3): Lie-group primitives, rigid-body
simulation, PD tracking and iLQR trajectory optimization."""

__version__ = "0.1.0"

from geoctrl.so3 import exp_so3, hat, log_so3, vee  # noqa: E402,F401

"""Constrained quadrotor hover control: linear MPC with an invariant terminal set and
offset-free output-feedback MPC."""

__version__ = "0.1.0"

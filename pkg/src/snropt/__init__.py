"""Differentiable EDFA + fiber cascade model and launch-profile optimizer.

Importing the package switches JAX to double precision; the cascade gradients
are checked against finite differences and need it.
"""
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"

"""Galerkin stochastic Navier-Stokes laboratory on the 3-torus."""

__version__ = "0.1.0"

from .spectral import FourierState, SpectralBasis, build_basis  # noqa: E402,F401
from .noise import CovarianceSpec, power_law, explicit_list  # noqa: E402,F401
from .integrator import DynamicsSpec, Galerkin, Linear, Truncated, Split, DriftRemoved  # noqa: E402,F401

"""Statistical inverse learning with random design.

Spectral, Hilbert-scale, projection, convex and nonlinear Tikhonov
estimators on an exactly controllable diagonal testbed, together with a
Monte Carlo harness that fits empirical convergence-rate exponents, and a
two-compartment pharmacokinetic covariate-model application.
"""
from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

"""Nonlocal aggregation-diffusion with Riesz interaction in one dimension.

Steady states and their small-``s`` limit, an upwind finite-volume
integrator, and a minimizing-movement (JKO) scheme for

    rho_t = (rho^m)'' + beta (rho^2)'' - chi (rho (K_s * rho)')',
    K_s(x) = c_{1,s} |x|^{2s-1}.
"""

__version__ = "0.1.0"

from .energy import EnergyBreakdown, free_energy
from .evolution import Trajectory, evolve, local_limit_evolve, weak_residual
from .grid import Density, Grid, Params
from .jko import JkoRun, jko_run, jko_step, w2_distance
from .riesz import build_weights, convolve
from .special import hls_constant, riesz_constant, sds_constant
from .steady import SteadyState, fixed_point_solve, limit_profile

__all__ = [
    "Density",
    "EnergyBreakdown",
    "Grid",
    "JkoRun",
    "Params",
    "SteadyState",
    "Trajectory",
    "build_weights",
    "convolve",
    "evolve",
    "fixed_point_solve",
    "free_energy",
    "hls_constant",
    "jko_run",
    "jko_step",
    "limit_profile",
    "local_limit_evolve",
    "riesz_constant",
    "sds_constant",
    "w2_distance",
    "weak_residual",
]

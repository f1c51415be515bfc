"""Particle discretization of porous-medium-type gradient flows on Laguerre cells."""

from .dual_solver import ParticleSystem, SolverState, primal_energy, solve_weights
from .energy import EnergyModel, Potential, power_law, quadratic_potential
from .geometry import Domain, Tessellation, build_tessellation

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "ParticleSystem",
    "SolverState",
    "primal_energy",
    "solve_weights",
    "EnergyModel",
    "Potential",
    "Tessellation",
    "build_tessellation",
    "power_law",
    "quadratic_potential",
    "__version__",
]

"""Porous medium equation on model manifolds: geometry, functional-inequality
constants, radial solver, barriers and decay-law analysis."""

from . import analysis, elliptic_barriers, funcineq, geometry, pme_solver
from .funcineq import WeightPair
from .geometry import ManifoldProfile

__version__ = "0.1.0"

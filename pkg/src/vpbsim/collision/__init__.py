"""Soft-potential cutoff Boltzmann collision operator."""

from .kernel import (collision_frequency, eval_k2_chi, gamma_bound_constant, k2x_bound,
                     k_singular_bound, post_collision)
from .operators import CollisionOperator, QParts, hydrodynamic_basis, project
from .params import CollisionParams, b0, chi, sphere_rule
from .table import KernelTable, load_or_build

__all__ = [
    "CollisionOperator", "CollisionParams", "KernelTable", "QParts", "b0", "chi",
    "collision_frequency", "eval_k2_chi", "gamma_bound_constant", "hydrodynamic_basis",
    "k2x_bound", "k_singular_bound", "load_or_build", "post_collision", "project", "sphere_rule",
]

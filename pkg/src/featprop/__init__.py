"""Convergent feature propagation on graphs, with edge embeddings (edge2vec)."""

from ._kernels import BACKEND
from .graph import SparseGraph, build_graph
from .propagation import (
    ConvergenceReport,
    NodePropWeights,
    NotConverged,
    OverflowDetected,
    SingularSystem,
    SolverConfig,
    check_convergence_conditions,
    project_to_feasible,
    propagate_fixed_point,
    solve_direct_vec,
    solver_config_for,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConvergenceReport",
    "NodePropWeights",
    "NotConverged",
    "OverflowDetected",
    "SingularSystem",
    "SolverConfig",
    "SparseGraph",
    "build_graph",
    "check_convergence_conditions",
    "project_to_feasible",
    "propagate_fixed_point",
    "solve_direct_vec",
    "solver_config_for",
]

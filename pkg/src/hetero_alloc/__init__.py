"""Resilient, energy-aware task allocation and execution for heterogeneous robot teams."""

from .model import HeterogeneityModel, Hyperedge, kron_shift, check_feasible_assignment
from .qp import QpProblem, QpSolution, QpSettings, solve_qp
from .tasks import (
    SingleIntegrator,
    CoverageDomain,
    GotoTask,
    TrajectoryTask,
    CoverageEscortTask,
    Linear,
    voronoi_centroid,
    lie_terms,
)
from .allocator import (
    AllocationProblem,
    AllocationSolution,
    InfeasibleAllocation,
    build_priority_constraints,
    solve_allocation,
    brute_force_allocation,
)
from .executor import execute_step
from .scenario import Scenario, load_scenario, bundled_scenario
from .sim import run_centralized, run_mixed, run_twin, run_experiment_scenario

__all__ = [
    "HeterogeneityModel",
    "Hyperedge",
    "kron_shift",
    "check_feasible_assignment",
    "QpProblem",
    "QpSolution",
    "QpSettings",
    "solve_qp",
    "SingleIntegrator",
    "CoverageDomain",
    "GotoTask",
    "TrajectoryTask",
    "CoverageEscortTask",
    "Linear",
    "voronoi_centroid",
    "lie_terms",
    "AllocationProblem",
    "AllocationSolution",
    "InfeasibleAllocation",
    "build_priority_constraints",
    "solve_allocation",
    "brute_force_allocation",
    "execute_step",
    "Scenario",
    "load_scenario",
    "bundled_scenario",
    "run_centralized",
    "run_mixed",
    "run_twin",
    "run_experiment_scenario",
]

__version__ = "0.1.0"

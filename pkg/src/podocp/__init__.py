"""Reduced-order modeling for optimal control of diffusion-convection-reaction problems.

Full-order discretization by symmetric interior penalty DG with upwinding
and Crank-Nicolson in time, Newton-CG optimization, mass-weighted POD,
parameter sensitivities of trajectories and bases, and enriched bases for
parameter changes in the diffusion.
"""

from .bench import SweepConfig, SweepRecord, emit, l2_time_space_error, run_sweep
from .enrichment import EnrichedBasis, baseline, expand, extrapolate, saim, subspace_angles
from .mesh import EdgeClassification, Mesh, build_uniform_mesh, classify_edges
from .newton import OptimizeStats, newton_cg
from .ocp import (
    OCPSetup,
    Trajectory,
    cost,
    hessian_vector,
    optimality_residual,
    optimize,
    reduced_gradient,
    solve_adjoint,
    solve_state,
)
from .pod import (
    POD,
    MassFactor,
    PODBasis,
    RankError,
    ReducedModel,
    SnapshotMatrix,
    build_snapshots,
    compute_pod,
    mass_factor,
    project_model,
    select_rank,
    solve_reduced_ocp,
)
from .sensitivity import SensitivityTriple, SVDSensitivity, solve_cse, solve_fd, svd_sensitivities
from .sipg import (
    DGConfig,
    DGSpace,
    assemble_mass,
    assemble_sipg,
    assemble_sipg_epsilon_derivative,
    l2_project,
)

__version__ = "0.1.0"

__all__ = [
    "DGConfig", "DGSpace", "EdgeClassification", "EnrichedBasis", "MassFactor", "Mesh", "OCPSetup",
    "OptimizeStats", "POD", "PODBasis", "RankError", "ReducedModel", "SVDSensitivity", "SensitivityTriple",
    "SnapshotMatrix", "SweepConfig", "SweepRecord", "Trajectory", "assemble_mass", "assemble_sipg",
    "assemble_sipg_epsilon_derivative", "baseline", "build_snapshots", "build_uniform_mesh", "classify_edges",
    "compute_pod", "cost", "emit", "expand", "extrapolate", "hessian_vector", "l2_project",
    "l2_time_space_error", "mass_factor", "newton_cg", "optimality_residual", "optimize",
    "project_model", "reduced_gradient", "run_sweep", "saim", "select_rank", "solve_adjoint",
    "solve_cse", "solve_fd", "solve_reduced_ocp", "solve_state", "subspace_angles", "svd_sensitivities",
]

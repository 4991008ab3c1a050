"""P1 finite elements and backward Euler schemes for the nonlocal Kirchhoff heat equation."""

from .assembly import (
    FemSystem,
    NodalField,
    QuadratureRule,
    apply_discrete_laplacian,
    assemble,
    element_matrices,
    h1_error,
    h1_seminorm_sq,
    interpolate,
    l2_error,
    l2_norm,
    load_vector,
    ritz_projection,
)
from .harness import ConvergenceRow, DecayFit, convergence_study, decay_study, fit_decay
from .mesh import Mesh, build_uniform_mesh, dump_mesh, load_mesh
from .problems import ProblemSpec, example1, example2, example3, get_problem
from .schemes import SchemeConfig, StepResult, TimeSeriesRecord, be_step, check_stability, mbe_step, run_simulation
from .sparse import SolveReport, SparseMatrix, cg_solve, smallest_generalized_eigenvalue

__version__ = "0.1.0"

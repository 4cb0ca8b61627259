"""Finite transposition (Galerkin projection) solver for backward SDEs."""

from .basis import (
    ChaosBasisFunction,
    FiniteElementSpace,
    MultiIndex,
    SimpleProcessBasisElement,
    enumerate_block_basis,
    eval_e,
    eval_h,
    gram_matrix,
    hermite_eval,
)
from .expectation import ExactEngine, MonteCarloEngine, UnsupportedDataError, exact_expect, mc_expect
from .grid import DyadicGrid, build_grid, clip_weight, refine
from .metrics import l2_error, rate_fit, sup_error
from .oracles import ClosedFormSolution, benchmark, direct_projection, nested_mc_conditional
from .polynomial import GaussianPolynomial
from .sampling import PathBatch, PathFunctional, brownian_value, coarsen, sample_paths
from .solver import (
    BSDEProblem,
    CoefficientTable,
    StepProcess,
    StepProcessSolution,
    TestTriple,
    assemble_solution,
    compute_alpha,
    compute_beta,
    solve_linear,
    solve_nonlinear_picard,
    variational_residual,
)

__version__ = "0.1.0"

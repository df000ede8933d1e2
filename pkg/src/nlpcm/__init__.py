"""Stochastic nonlocal diffusion with meshfree quadrature and sparse-grid collocation."""
from .errors import (CoefficientError, ConfigError, GridError, KernelError, NlpcmError,
                     SolverError, UnisolvencyError)
from .grid import DomainSpec, ParticleGrid, build_grid
from .kernel import KernelSpec, ball_moment, eval_kernel
from .quadrature import QuadratureTable, build_table
from .nonlocal_solver import CoefficientField, NonlocalDiscretization, StiffnessSystem, assemble, solve
from .local_solver import LocalProblem, LocalSolution, solve_local
from .sparse_grid import Distribution, Rule1D, SparseGridPlan, build_sparse_grid, moment_estimates
from .random_field import CovarianceSpec, KLField, build_kl_field, eig_decompose_1d

__version__ = "0.1.0"

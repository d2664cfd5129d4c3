"""Sparsifying preconditioner for pseudospectral discretizations of indefinite
periodic Helmholtz and Schrodinger problems."""

from .errors import (
    ConfigError,
    DegenerateGram,
    IndivisibleGrid,
    InvalidMedia,
    MaxIterExceeded,
    ShiftResonant,
    SingularMatrix,
)
from .spectral import GridSpec, adjust_shift, apply_green, apply_laplacian, green_kernel
from .problem import MediaSpec, SplitProblem, build_helmholtz, build_problem, build_schrodinger
from .partition import build_partition, separator_tree
from .sparsifier import assemble_C, assemble_P, assemble_Q, compute_stencil, sparsify
from .sparse_solver import numeric_factor, solve, symbolic_factor
from .krylov import gmres, solve_system
from .harness import RunConfig, build_setup, run_check, run_solve, run_sweep

__version__ = "0.1.0"

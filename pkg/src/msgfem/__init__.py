"""Multiscale spectral GFEM for heterogeneous scalar diffusion on structured Q1 meshes."""

from .assembly import (assemble_load, assemble_mass, assemble_stiffness, element_mass,
                       element_stiffness, energy_norm, h1_norm, pou_scale)
from .decomp import build_pou, decompose, overlap_constants
from .factor import BACKEND, BandLDL, FactorizationError
from .gfem import (build_coarse_space, coarse_solve, error_report, fine_solve, run_gfem,
                   verify_global_bound)
from .grid import (build_mesh, builtin_coefficient, classify_boundary, eval_source,
                   load_coefficient, save_coefficient, benchmark_problem)
from .local_solver import (adaptive_select, apply_reduced_operator, factorize_local,
                           local_system, solve_local_eigenpairs, solve_particular_d,
                           solve_particular_r)

__version__ = "0.1.0"

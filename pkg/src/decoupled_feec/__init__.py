"""Finite element exterior calculus toolkit and a decoupled solver for
fourth-order exterior problems on simplicial meshes."""

from .exterior import AlternatingForm, hodge_star, wedge
from .fespaces import FESpace, build_space, diagonal_inner, exactness_audit
from .harness import ConvergenceReport, error_norms, make_case, run_audits, run_convergence
from .mesh import SimplicialMesh, box_mesh
from .polyforms import PolynomialForm, space_P, space_Phi, space_Pminus
from .system import (DecoupledSolution, SolverConfig, SolverError, infsup_probe,
                     solve_fourth_order, solve_generalized_stokes, solve_mixed_darcy)

__all__ = [
    "AlternatingForm", "ConvergenceReport", "DecoupledSolution", "FESpace", "error_norms", "PolynomialForm",
    "SimplicialMesh", "SolverConfig", "SolverError", "box_mesh", "build_space", "diagonal_inner",
    "exactness_audit", "hodge_star", "infsup_probe", "make_case", "run_audits",
    "run_convergence", "solve_fourth_order", "solve_generalized_stokes", "solve_mixed_darcy",
    "space_P", "space_Phi", "space_Pminus", "wedge",
]

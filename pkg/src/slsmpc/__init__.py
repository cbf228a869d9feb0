"""Robust system level synthesis MPC for uncertain LTV systems."""

from .constraints import ConstraintSet
from .operator import BltOperator, downshift, induced_inf_norm, inverse
from .polytope import Polytope, max_robust_invariant_set, robust_pre
from .relaxation import (Hyperparameters, Relaxation, SearchConfig, bisect_bounds, grid_search_solve,
                         mpc_step, verify_infeasible)
from .sls import CostWeights, LtvModel, SystemResponse, realize_controller
from .solver import ConicProgram, Status, solve
from .tube import TubeShape, build_tube_program, make_zinv_shape, solve_tube

__version__ = "0.1.0"

__all__ = [
    "BltOperator", "ConicProgram", "ConstraintSet", "CostWeights", "Hyperparameters", "LtvModel", "Polytope",
    "Relaxation", "SearchConfig", "Status", "SystemResponse", "TubeShape", "bisect_bounds", "build_tube_program",
    "downshift", "grid_search_solve", "induced_inf_norm", "inverse", "make_zinv_shape", "max_robust_invariant_set",
    "mpc_step", "realize_controller", "robust_pre", "solve", "solve_tube", "verify_infeasible",
]

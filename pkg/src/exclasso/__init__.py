"""Weighted exclusive-lasso regression solved by a dual-Newton proximal point method."""

from .baselines import BaselineParams, admm_solve, apg_solve, ilsa_solve
from .data import (
    SyntheticSpec,
    gen_synthetic,
    lambda_from_fraction,
    load_instance,
    log_grid,
    save_instance,
)
from .estimators import ExclusiveLassoClassifier, ExclusiveLassoRegressor
from .model import GroupPartition, LossKind, ProblemInstance, SolveReport, kkt_residual, primal_objective
from .ppdna import PpaParams, solve, solve_path
from .prox import prox_exclusive, prox_sq_l1
from .ssn import NewtonStrategy, SsnParams

__version__ = "0.1.0"

__all__ = [
    "BaselineParams",
    "ExclusiveLassoClassifier",
    "ExclusiveLassoRegressor",
    "GroupPartition",
    "LossKind",
    "NewtonStrategy",
    "PpaParams",
    "ProblemInstance",
    "SolveReport",
    "SsnParams",
    "SyntheticSpec",
    "admm_solve",
    "apg_solve",
    "gen_synthetic",
    "ilsa_solve",
    "kkt_residual",
    "lambda_from_fraction",
    "load_instance",
    "log_grid",
    "primal_objective",
    "prox_exclusive",
    "prox_sq_l1",
    "save_instance",
    "solve",
    "solve_path",
]

"""Distributionally robust federated learning with a per-client Wasserstein ambiguity set."""

from .admm import RunRecord, solve
from .baselines import METHODS, solve_afl, solve_drfa, solve_erm, train
from .model import (
    ClientDataset,
    LossSpec,
    ProblemSpec,
    RobustnessSpec,
    SolverConfig,
    SpecError,
    SupportSpec,
    WeightSetSpec,
    validate,
)
from .omega import worst_case_client_loss

__all__ = [
    "ClientDataset",
    "LossSpec",
    "METHODS",
    "ProblemSpec",
    "RobustnessSpec",
    "RunRecord",
    "SolverConfig",
    "SpecError",
    "SupportSpec",
    "WeightSetSpec",
    "solve",
    "solve_afl",
    "solve_drfa",
    "solve_erm",
    "train",
    "validate",
    "worst_case_client_loss",
]

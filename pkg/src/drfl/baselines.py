"""Non-robust and worst-client baselines.

* ERM: fixed-weight empirical risk ``sum_s q_hat_s * mean loss_s``.
* AFL: the federated solver with every radius set to zero.
* DRFA: AFL over the whole simplex (``theta = 2`` with ``p = 1`` covers it),
  with a centralized worst-client solve for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import admm
from .model import ClientDataset, ProblemSpec, SolverConfig, validate
from .reference import centralized_solve

# max over the simplex of ||q - q_hat||_1 is at most 2
SIMPLEX_THETA = 2.0


@dataclass
class BaselineRecord:
    method: str
    objective: float
    client_losses: np.ndarray
    converged: bool = True
    iterations: int = 0


def zero_radius(spec: ProblemSpec) -> ProblemSpec:
    return replace(spec, robustness=replace(spec.robustness, rho=(0.0,)))


def simplex_weights(spec: ProblemSpec) -> ProblemSpec:
    return replace(spec, weights=replace(spec.weights, theta=SIMPLEX_THETA, p=1.0))


def solve_erm(spec: ProblemSpec, datasets: list[ClientDataset], config: SolverConfig = SolverConfig()):
    """Fixed-weight empirical risk minimization, solved centrally as one convex program."""
    spec = zero_radius(spec)
    validate(spec, datasets)
    w, obj, z = centralized_solve(spec, datasets, mode="weighted", tol=min(config.inner_tol, 1e-8))
    return w, BaselineRecord("erm", obj, z)


def solve_afl(spec: ProblemSpec, datasets: list[ClientDataset], config: SolverConfig = SolverConfig(), **kw):
    """Weight-set worst case of the empirical losses (all radii zero), federated."""
    w, rec = admm.solve(zero_radius(spec), datasets, config, **kw)
    return w, rec


def solve_drfa(spec: ProblemSpec, datasets: list[ClientDataset], config: SolverConfig = SolverConfig(), **kw):
    """Worst-client empirical loss, federated (AFL with the weight set covering the simplex)."""
    w, rec = admm.solve(simplex_weights(zero_radius(spec)), datasets, config, **kw)
    return w, rec


def solve_drfa_direct(spec: ProblemSpec, datasets: list[ClientDataset], tol: float = 1e-9):
    """``min gamma`` s.t. every client's empirical loss is at most ``gamma`` (centralized)."""
    spec = zero_radius(spec)
    w, obj, z = centralized_solve(spec, datasets, mode="worst", tol=tol)
    return w, BaselineRecord("drfa", obj, z)


METHODS = ("drfl", "erm", "afl", "drfa")


def train(method: str, spec: ProblemSpec, datasets, config: SolverConfig = SolverConfig(), **kw):
    """Dispatch by method name; returns ``(w, record, converged)``."""
    if method == "drfl":
        w, rec = admm.solve(spec, datasets, config, **kw)
        return w, rec, rec.converged
    if method == "erm":
        w, rec = solve_erm(spec, datasets, config)
        return w, rec, True
    if method == "afl":
        w, rec = solve_afl(spec, datasets, config, **kw)
        return w, rec, rec.converged
    if method == "drfa":
        w, rec = solve_drfa(spec, datasets, config, **kw)
        return w, rec, rec.converged
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")

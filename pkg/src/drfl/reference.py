"""Centralized (non-federated) solves of the full reformulated programs.

These see every client's samples at once and are used as oracles for the
federated solver: the weight-set program (``"ball"``), the worst-client
program (``"worst"``) and the fixed-weight program (``"weighted"``).
"""

from __future__ import annotations

import math

import numpy as np

from .constraints import Layout, NormRow, SystemBuilder, embed, stack
from .inner_solver import ConvexProgram, solve
from .model import ClientDataset, ProblemSpec, validate
from .omega import build_omega


def _client_systems(spec: ProblemSpec, datasets):
    out = []
    for d in datasets:
        rho = spec.robustness.rho_for(d.client_id)
        cs = build_omega(
            spec.loss, spec.support, spec.robustness.kappa, spec.robustness.metric_norm, d, empirical=rho == 0
        )
        out.append((d, rho, cs))
    return out


def centralized_solve(spec: ProblemSpec, datasets: list[ClientDataset], mode: str = "ball", tol: float = 1e-9):
    """Solve the whole program in one piece; returns ``(w, objective, z)``.

    ``mode``:
      * ``"ball"``: ``q_hat'(z + eta) + theta * ||z + gamma e + eta||_{p*}``
      * ``"worst"``: ``max_s z_s`` (weights range over the whole simplex)
      * ``"weighted"``: ``q_hat' z`` (fixed weights)
    where ``z_s`` is client ``s``'s worst-case loss surrogate.
    """
    validate(spec, datasets)
    spec = spec.resolved(datasets)
    datasets = sorted(datasets, key=lambda d: d.client_id)
    S, n = len(datasets), spec.n_features
    parts = _client_systems(spec, datasets)

    layout = Layout([("w", n), ("z", S), ("eta", S), ("gamma", 1), ("tau", S)])
    for s, (_, _, cs) in enumerate(parts):
        for name in cs.layout.names():
            if name != "w":
                layout.add(f"c{s}:{name}", cs.layout.block_size(name))
    systems = []
    for s, (_, _, cs) in enumerate(parts):
        mapping = {name: ("w" if name == "w" else f"c{s}:{name}") for name in cs.layout.names()}
        systems.append(embed(cs, layout, mapping))

    sb = SystemBuilder(layout)
    for s, (d, rho, cs) in enumerate(parts):
        N = d.size
        terms = [("z", s, 1.0), (f"c{s}:lam", 0, -rho)]
        terms += [(f"c{s}:alpha", i, -1.0 / N) for i in range(N)]
        sb.eq(terms, 0.0)
    q_hat = np.asarray(spec.weights.q_hat)
    theta, p = spec.weights.theta, spec.weights.p
    obj = {}
    if mode == "weighted":
        obj["z"] = q_hat
        sb.bound("eta", 0.0, 0.0)
        sb.bound("gamma", 0.0, 0.0)
        sb.bound("tau", 0.0, 0.0)
    elif mode == "worst":
        g = sb.group("epigraph", "worst client")
        for s in range(S):
            sb.row([("z", s, 1.0), ("gamma", 0, -1.0)], 0.0, g)
        obj["gamma"] = 1.0
        sb.bound("eta", 0.0, 0.0)
        sb.bound("tau", 0.0, 0.0)
    elif mode == "ball":
        sb.bound("eta", 0.0)
        obj["z"] = q_hat
        obj["eta"] = q_hat
        g = sb.group("epigraph", "weight-set norm")
        if p == 1.0:
            # ||.||_inf <= tau_0
            for s in range(S):
                for sgn in (1.0, -1.0):
                    sb.row(
                        [("z", s, sgn), ("eta", s, sgn), ("gamma", 0, sgn), ("tau", 0, -1.0)], 0.0, g
                    )
            sb.bound("tau", 0.0, np.inf)
            obj["tau"] = np.r_[theta, np.zeros(S - 1)]
        elif p == math.inf:
            # ||.||_1 <= sum tau
            for s in range(S):
                for sgn in (1.0, -1.0):
                    sb.row([("z", s, sgn), ("eta", s, sgn), ("gamma", 0, sgn), ("tau", s, -1.0)], 0.0, g)
            obj["tau"] = theta
        else:
            M = np.zeros((S, layout.size))
            for s in range(S):
                M[s] = sb.vector([("z", s, 1.0), ("eta", s, 1.0), ("gamma", 0, 1.0)])
            sb.add_nonlinear(NormRow(M, np.zeros(S), sb.vector([("tau", 0, 1.0)]), 0.0, 2.0), g)
            sb.bound("tau", 0.0, np.inf)
            obj["tau"] = np.r_[theta, np.zeros(S - 1)]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    systems.append(sb.build())
    cs = stack(systems, layout)
    sol = solve(ConvexProgram(cs, layout.join(obj)), tol=tol)
    return sol.x[layout["w"]].copy(), float(sol.objective), sol.x[layout["z"]].copy()

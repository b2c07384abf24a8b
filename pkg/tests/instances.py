"""Seeded random instances shared by unit and acceptance tests."""

import numpy as np

from drfl.model import ClientDataset, LossSpec, ProblemSpec, RobustnessSpec, SupportSpec, WeightSetSpec


def tiny_clients(seed, S=2, N=3, n=2):
    rng = np.random.default_rng(seed)
    out = []
    for s in range(S):
        X = rng.uniform(-1.0, 1.0, size=(N, n))
        y = rng.choice([-1.0, 1.0], size=N)
        out.append(ClientDataset(s + 1, X, y))
    return out


def tiny_svm(seed, S=2, N=3, n=2, theta=0.1, p=1, kappa=0.5, rho=None):
    """Box-supported hinge instance with radii drawn from [0.01, 0.1]."""
    rng = np.random.default_rng([seed, 7])
    if rho is None:
        rho = tuple(rng.uniform(0.01, 0.1, size=S))
    spec = ProblemSpec(
        LossSpec("hinge"),
        SupportSpec("box_symmetric"),
        RobustnessSpec(tuple(np.atleast_1d(rho)), kappa, "l1"),
        WeightSetSpec(theta, p),
    )
    return spec, tiny_clients(seed, S, N, n)


def as_pairs(clients):
    return [(c.X, c.y) for c in clients]

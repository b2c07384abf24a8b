"""Worst-case client weights over ``{q in simplex : ||q - q_hat||_p <= theta}``.

``worst_case_weights(v, ...)`` returns a maximizer of ``q @ v`` over that set.
It is used to score iterates (the optimal ``gamma, eta`` for fixed ``z`` give
exactly ``max_q q @ z``) and to evaluate the AFL/DRFA/DRFL objectives at a
fixed model.
"""

from __future__ import annotations

import math

import numpy as np

from .projections import normalize_p, project_simplex


def _greedy_l1(v, q_hat, theta):
    # Moving one unit of mass costs 2 in l1: take theta/2 from the cheapest
    # clients and give it all to the best one.
    q = q_hat.copy()
    best = int(np.argmax(v))
    budget = min(theta / 2.0, 1.0 - q_hat[best])
    for s in np.argsort(v, kind="stable"):
        if budget <= 0 or s == best:
            continue
        move = min(budget, q[s])
        q[s] -= move
        q[best] += move
        budget -= move
    return q


def _greedy_linf(v, q_hat, theta):
    lo = np.maximum(q_hat - theta, 0.0)
    hi = np.minimum(q_hat + theta, 1.0)
    q = lo.copy()
    room = 1.0 - lo.sum()
    for s in np.argsort(-v, kind="stable"):
        if room <= 0:
            break
        add = min(room, hi[s] - lo[s])
        q[s] += add
        room -= add
    return q


def _path_l2(v, q_hat, theta, iters=200):
    # Maximizers follow q(t) = Proj_simplex(q_hat + t v); the ball binds at
    # the t where ||q(t) - q_hat|| = theta, unless the path never leaves it.
    if np.ptp(v) == 0:
        return q_hat.copy()

    def dist(t):
        return np.linalg.norm(project_simplex(q_hat + t * v) - q_hat)

    hi = 1.0 / np.ptp(v)
    while dist(hi) < theta and hi < 1e15:
        hi *= 2.0
    if dist(hi) <= theta:
        return project_simplex(q_hat + hi * v)
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if dist(mid) > theta:
            hi = mid
        else:
            lo = mid
    return project_simplex(q_hat + lo * v)


def worst_case_weights(v, q_hat, theta: float, p) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    q_hat = np.asarray(q_hat, dtype=float)
    if v.shape != q_hat.shape:
        raise ValueError("values and q_hat must have the same length")
    if theta <= 0:
        return q_hat.copy()
    p = normalize_p(p)
    if p == 1.0:
        return _greedy_l1(v, q_hat, theta)
    if p == math.inf:
        return _greedy_linf(v, q_hat, theta)
    return _path_l2(v, q_hat, theta)


def worst_case_value(v, q_hat, theta: float, p) -> float:
    """``max q @ v`` over the weight set (``q_hat @ v`` when ``theta == 0``)."""
    return float(np.dot(worst_case_weights(v, q_hat, theta, p), v))

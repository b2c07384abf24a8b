"""Euclidean projections onto norm balls and the prox of a scaled dual norm.

Only the three norms used by the weight-set ball are supported:
``p`` in ``{1, 2, inf}``.
"""

from __future__ import annotations

import math

import numpy as np

# Vectors longer than this use bisection for the l1 threshold instead of a sort.
_SORT_LIMIT = 1_000_000


def _as_vector(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def _check_radius(r: float) -> None:
    if not r > 0:
        raise ValueError(f"ball radius must be positive, got {r!r}")


def normalize_p(p) -> float:
    """Map ``1``, ``2``, ``"inf"`` (and friends) to ``1.0``, ``2.0``, ``math.inf``."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "infinity", "linf", "max"):
            return math.inf
        if key in ("l1", "1"):
            return 1.0
        if key in ("l2", "2"):
            return 2.0
        raise ValueError(f"unsupported norm index {p!r}")
    value = float(p)
    if value not in (1.0, 2.0, math.inf):
        raise ValueError(f"unsupported norm index {p!r}; expected 1, 2 or inf")
    return value


def dual_index(p) -> float:
    """Index of the dual norm: 1 <-> inf, 2 <-> 2."""
    p = normalize_p(p)
    if p == 1.0:
        return math.inf
    if p == math.inf:
        return 1.0
    return 2.0


def norm(x, p) -> float:
    return float(np.linalg.norm(_as_vector(x), ord=normalize_p(p)))


def soft_threshold(x, delta: float) -> np.ndarray:
    x = _as_vector(x)
    return np.sign(x) * np.maximum(np.abs(x) - delta, 0.0)


def _l1_threshold_sort(a: np.ndarray, r: float) -> float:
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    hits = np.nonzero(u * j > css - r)[0]
    # j = 1 always qualifies in exact arithmetic; rounding can hide it when r is tiny
    k = hits[-1] if hits.size else 0
    return float((css[k] - r) / (k + 1))


def _l1_threshold_bisect(a: np.ndarray, r: float, tol: float = 1e-12) -> float:
    lo, hi = 0.0, float(a.max())
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if np.maximum(a - mid, 0.0).sum() > r:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def project_l1_ball(x, r: float = 1.0) -> np.ndarray:
    """Project ``x`` onto ``{v : ||v||_1 <= r}``.

    Outside the ball the result is the soft-thresholded vector whose l1
    norm equals ``r``; the threshold is found exactly from a sort (or by
    bisection for very long inputs).
    """
    _check_radius(r)
    x = _as_vector(x)
    a = np.abs(x)
    if a.sum() <= r:
        return x.copy()
    if a.size > _SORT_LIMIT:
        delta = _l1_threshold_bisect(a, r)
    else:
        delta = _l1_threshold_sort(a, r)
    return soft_threshold(x, delta)


def project_l2_ball(x, r: float = 1.0) -> np.ndarray:
    _check_radius(r)
    x = _as_vector(x)
    return x * (r / max(float(np.linalg.norm(x)), r))


def project_linf_ball(x, r: float = 1.0) -> np.ndarray:
    _check_radius(r)
    return np.clip(_as_vector(x), -r, r)


def project_ball(x, r: float, p) -> np.ndarray:
    p = normalize_p(p)
    if p == 1.0:
        return project_l1_ball(x, r)
    if p == 2.0:
        return project_l2_ball(x, r)
    return project_linf_ball(x, r)


def prox_dual_norm(u, scale: float, p) -> np.ndarray:
    """Prox of ``scale * ||.||_{p*}`` evaluated at ``u``.

    Uses the Moreau decomposition ``u - scale * Proj_{B_p[0,1]}(u / scale)``,
    computed as ``u - Proj_{B_p[0,scale]}(u)`` so tiny scales do not overflow.
    Returns exact zeros whenever ``||u||_p <= scale``.
    """
    if not scale > 0:
        raise ValueError(f"prox scale must be positive, got {scale!r}")
    u = _as_vector(u)
    p = normalize_p(p)
    if np.linalg.norm(u, ord=p) <= scale:
        return np.zeros_like(u)
    return u - project_ball(u, scale, p)


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{q >= 0 : sum(q) = total}``."""
    v = _as_vector(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    j = np.arange(1, v.size + 1)
    k = np.nonzero(u - css / j > 0)[0][-1]
    shift = css[k] / (k + 1)
    return np.maximum(v - shift, 0.0)

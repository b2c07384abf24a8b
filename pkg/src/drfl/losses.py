"""Pointwise losses for linear models ``f_w(x) = <w, x>``."""

from __future__ import annotations

import numpy as np

from .model import ClientDataset, LossSpec, Sample


def _margin_or_residual(loss: LossSpec, w, X, y):
    score = np.asarray(X, dtype=float) @ np.asarray(w, dtype=float)
    if loss.is_classification:
        return y * score
    return score - y


def loss_values(loss: LossSpec, w, X, y) -> np.ndarray:
    """Vectorized loss over rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, dtype=float).reshape(-1)
    if X.shape[1] != w.size:
        raise ValueError(f"model has {w.size} weights, features have {X.shape[1]}")
    y = np.asarray(y, dtype=float).reshape(-1)
    z = _margin_or_residual(loss, w, X, y)
    eps = loss.epsilon
    fam = loss.family
    if fam == "huber":
        a = np.abs(z)
        return np.where(a <= eps, 0.5 * z * z, eps * (a - 0.5 * eps))
    if fam == "svr":
        return np.maximum(0.0, np.abs(z) - eps)
    if fam == "quantile":
        return np.maximum(-eps * z, (1.0 - eps) * z)
    if fam == "hinge":
        return np.maximum(0.0, 1.0 - z)
    if fam == "smooth_hinge":
        return np.where(z <= 0, 0.5 - z, np.where(z < 1, 0.5 * (1 - z) ** 2, 0.0))
    if fam == "logistic":
        return np.logaddexp(0.0, -z)
    raise ValueError(f"unknown loss family {fam!r}")


def loss_eval(loss: LossSpec, w, sample: Sample) -> float:
    return float(loss_values(loss, w, np.atleast_2d(sample.features), [sample.label])[0])


def empirical_loss(loss: LossSpec, w, client: ClientDataset) -> float:
    return float(np.mean(loss_values(loss, w, client.X, client.y)))


def lipschitz_constant(loss: LossSpec) -> float:
    """Lipschitz constant of the scalar loss in its margin / residual."""
    if loss.family == "huber":
        return float(loss.epsilon)
    if loss.family == "quantile":
        return float(max(loss.epsilon, 1.0 - loss.epsilon))
    return 1.0

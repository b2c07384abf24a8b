"""Cross-validation, noise sweeps, metrics and result persistence."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import METHODS, train
from .data import DataError, NoiseSchedule, add_noise, inject_noise, partition_clients, partition_imbalanced
from .model import ClientDataset, ProblemSpec, SolverConfig

log = logging.getLogger(__name__)

RHO_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 2e-6, 2e-5, 2e-4, 2e-3, 2e-2, 5e-6, 5e-4, 5e-2, 5e-1, 1.0)
KAPPA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
THETA_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)

# which hyper-parameters each method actually reads
TUNED = {"drfl": ("rho", "kappa", "theta"), "afl": ("theta",), "drfa": (), "erm": ()}


@dataclass(frozen=True)
class Grid:
    rho: tuple = RHO_GRID
    kappa: tuple = KAPPA_GRID
    theta: tuple = THETA_GRID

    def __post_init__(self):
        for name in ("rho", "kappa", "theta"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} grid is empty")
            object.__setattr__(self, name, vals)

    def points(self, method: str = "drfl") -> list[tuple[float, float, float]]:
        """Grid points relevant to ``method``, in (rho, kappa, theta) lexicographic order.

        Parameters a method ignores are pinned to their smallest grid value so
        that duplicate evaluations are skipped.
        """
        tuned = TUNED[method]
        axes = [sorted(getattr(self, n)) if n in tuned else [min(getattr(self, n))] for n in ("rho", "kappa", "theta")]
        return list(itertools.product(*axes))

    @property
    def size(self) -> int:
        return len(self.rho) * len(self.kappa) * len(self.theta)


def with_params(spec: ProblemSpec, rho: float, kappa: float, theta: float) -> ProblemSpec:
    return replace(
        spec,
        robustness=replace(spec.robustness, rho=(rho,), kappa=kappa),
        weights=replace(spec.weights, theta=theta),
    )


# ----- metrics ---------------------------------------------------------------


def predict_sign(w, X) -> np.ndarray:
    score = np.asarray(X, dtype=float) @ np.asarray(w, dtype=float)
    return np.where(score >= 0, 1.0, -1.0)


def evaluate(w, X, y, task: str = "classification") -> float:
    """Accuracy (``sign(0) = +1``) for classification, mean squared error for regression."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise DataError("cannot evaluate on an empty test set")
    if task == "classification":
        return float(np.mean(predict_sign(w, X) == y))
    return float(np.mean((X @ np.asarray(w, dtype=float) - y) ** 2))


def higher_is_better(task: str) -> bool:
    return task == "classification"


# ----- cross-validation ------------------------------------------------------


@dataclass
class CVResult:
    best: dict
    table: list = field(default_factory=list)
    fold_resamples: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            k = len(self.table[0]["scores"]) if self.table else 0
            wr.writerow(["rho", "kappa", "theta"] + [f"fold{i + 1}" for i in range(k)] + ["mean", "converged"])
            for row in self.table:
                wr.writerow(
                    [repr(row["rho"]), repr(row["kappa"]), repr(row["theta"])]
                    + [repr(s) for s in row["scores"]]
                    + [repr(row["mean"]), int(row["converged"])]
                )


def client_folds(clients: list[ClientDataset], k: int, seed: int, classification: bool):
    """Per-client k-fold index lists; reshuffles until every training part holds both classes."""
    for c in clients:
        if c.size < k:
            raise DataError(f"client {c.client_id} has {c.size} samples, fewer than {k} folds")
    resamples = 0
    for attempt in range(1000):
        folds = []
        ok = True
        for c in clients:
            rng = np.random.default_rng([seed, c.client_id, attempt])
            parts = np.array_split(rng.permutation(c.size), k)
            if classification:
                for f in range(k):
                    train_idx = np.setdiff1d(np.arange(c.size), parts[f])
                    if np.unique(c.y[train_idx]).size < 2:
                        ok = False
            folds.append(parts)
        if ok:
            return folds, resamples
        resamples += 1
        log.info("fold split left a single class in a training part; reshuffling")
    raise DataError("could not find folds with both classes in every training part")


def _quiet(method: str) -> dict:
    return {} if method == "erm" else {"log_messages": False, "evaluate_final": False}


def _cv_point(method, spec, clients, folds, params, config, task):
    rho, kappa, theta = params
    sp = with_params(spec, rho, kappa, theta)
    k = len(folds[0])
    scores, converged = [], True
    for f in range(k):
        train_sets, val_X, val_y = [], [], []
        for c, parts in zip(clients, folds):
            val = np.sort(parts[f])
            tr = np.setdiff1d(np.arange(c.size), val)
            train_sets.append(c.subset(tr))
            val_X.append(c.X[val])
            val_y.append(c.y[val])
        w, _, conv = train(method, sp, train_sets, config, **_quiet(method))
        converged &= bool(conv)
        scores.append(evaluate(w, np.vstack(val_X), np.concatenate(val_y), task))
    return {"rho": rho, "kappa": kappa, "theta": theta, "scores": scores, "mean": float(np.mean(scores)), "converged": converged}


def cross_validate(
    method: str,
    spec: ProblemSpec,
    clients: list[ClientDataset],
    grid: Grid = Grid(),
    k: int = 5,
    seed: int = 0,
    config: SolverConfig = SolverConfig(),
    threads: int = 1,
) -> CVResult:
    """Pick the grid point with the best mean validation score (ties: smallest rho, kappa, theta)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    task = "classification" if spec.is_classification else "regression"
    folds, resamples = client_folds(clients, k, seed, spec.is_classification)
    points = grid.points(method)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            table = list(pool.map(lambda p: _cv_point(method, spec, clients, folds, p, config, task), points))
    else:
        table = [_cv_point(method, spec, clients, folds, p, config, task) for p in points]
    sign = 1.0 if higher_is_better(task) else -1.0
    # points are already in lexicographic order, so the first maximizer wins ties
    best_row = max(table, key=lambda r: sign * r["mean"]) if table else None
    best = {key: best_row[key] for key in ("rho", "kappa", "theta", "mean")}
    return CVResult(best, table, resamples)


# ----- noise sweeps ----------------------------------------------------------


def add_train_noise(clients: list[ClientDataset], client_id: int, mean: float, sd: float, seed: int = 0):
    return [inject_noise(c, mean, sd, seed) if c.client_id == client_id else c for c in clients]


def federate(X, y, S: int = 3, seed: int = 0, imbalance=None) -> list[ClientDataset]:
    clients = partition_clients(X, y, S, seed)
    if imbalance is not None:
        clients = partition_imbalanced(clients, imbalance, seed)
    return clients


def run_noise_sweep(models: dict, X_test, y_test, schedule: NoiseSchedule, task: str = "classification"):
    """Evaluate every model on noisy copies of the test set; one row per (level, method).

    All models see the same noise draw at a given level.
    """
    rows = []
    for li, (mean, sd) in enumerate(schedule.levels()):
        rng = np.random.default_rng([schedule.seed, li])
        Xn = add_noise(X_test, mean, sd, rng)
        for name, w in models.items():
            rows.append({"level": li, "mean": mean, "sd": sd, "method": name, "metric": evaluate(w, Xn, y_test, task)})
    return rows


def write_rows(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ----- manifests -------------------------------------------------------------


def content_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_manifest(path, **fields) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(fields), fh, indent=2, sort_keys=True)
        fh.write("\n")

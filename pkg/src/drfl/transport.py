"""1-D transport distances and the containment / volume Monte Carlo study.

Per-client balls (one radius for every client, centred at each client's
empirical distribution) are compared with a single ball around the pooled
empirical distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if a.shape != w.shape or a.size == 0:
            raise ValueError("atoms and weights must be nonempty and of equal length")
        if np.any(np.diff(a) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_pairs(cls, atoms, weights) -> "DiscreteDist":
        """Sort, merge repeated atoms and drop nothing (zero weights are kept)."""
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        uniq, inv = np.unique(atoms, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, weights)
        return cls(uniq, merged / merged.sum())

    def cdf(self, x) -> np.ndarray:
        idx = np.searchsorted(self.atoms, x, side="right")
        return np.concatenate([[0.0], np.cumsum(self.weights)])[idx]


def mixture(dists, q) -> DiscreteDist:
    atoms = np.concatenate([d.atoms for d in dists])
    weights = np.concatenate([qs * d.weights for d, qs in zip(dists, q)])
    return DiscreteDist.from_pairs(atoms, weights)


def wasserstein_1d(a: DiscreteDist, b: DiscreteDist) -> float:
    """Type-1 distance: integral of ``|F_a - F_b|`` (equivalently of the quantile gap)."""
    grid = np.union1d(a.atoms, b.atoms)
    if grid.size == 1:
        return 0.0
    gaps = np.abs(a.cdf(grid[:-1]) - b.cdf(grid[:-1]))
    return float(np.dot(gaps, np.diff(grid)))


def _w1_on_grid(P, Q, grid) -> np.ndarray:
    """Row-wise distances between weight matrices on a shared sorted grid."""
    diff = np.cumsum(np.asarray(P) - np.asarray(Q), axis=-1)[..., :-1]
    return np.abs(diff) @ np.diff(grid)


# ----- truth model -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruthModel:
    clients: tuple
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.size != len(self.clients) or np.any(q < 0) or abs(q.sum() - 1) > 1e-12:
            raise ValueError("client weights must be a probability vector, one entry per client")
        object.__setattr__(self, "clients", tuple(self.clients))
        object.__setattr__(self, "q", q)

    @property
    def grid(self) -> np.ndarray:
        return np.unique(np.concatenate([d.atoms for d in self.clients]))

    def aggregate(self) -> DiscreteDist:
        return mixture(self.clients, self.q)

    def to_dict(self) -> dict:
        return {
            "clients": [{"atoms": d.atoms.tolist(), "weights": d.weights.tolist()} for d in self.clients],
            "q": self.q.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TruthModel":
        return cls(tuple(DiscreteDist(c["atoms"], c["weights"]) for c in d["clients"]), d["q"])


def default_truth() -> TruthModel:
    return TruthModel(
        (DiscreteDist([0.0, 1.0, 2.0], [0.6, 0.3, 0.1]), DiscreteDist([1.0, 2.0, 3.0], [0.2, 0.5, 0.3])),
        [0.4, 0.6],
    )


def default_rho_grid(n: int = 200) -> np.ndarray:
    return np.geomspace(1e-5, 0.5, n)


def default_levels() -> np.ndarray:
    return np.round(np.arange(0.10, 1.0 + 1e-9, 0.05), 2)


# ----- stage 1: containment probabilities ------------------------------------


@dataclass
class EmpiricalDraw:
    q_hat: np.ndarray
    client_weights: list  # per-client empirical weights on that client's atoms


def draw_empirical(truth: TruthModel, n_samples: int, rng) -> EmpiricalDraw | None:
    """Sample client labels then values; ``None`` if some client got no samples."""
    S = len(truth.clients)
    labels = rng.choice(S, size=n_samples, p=truth.q)
    counts = np.bincount(labels, minlength=S)
    if np.any(counts == 0):
        return None
    weights = []
    for s, d in enumerate(truth.clients):
        idx = rng.choice(d.atoms.size, size=counts[s], p=d.weights)
        weights.append(np.bincount(idx, minlength=d.atoms.size) / counts[s])
    return EmpiricalDraw(counts / n_samples, weights)


def _on_grid(truth: TruthModel, q, client_weights) -> np.ndarray:
    grid = truth.grid
    out = np.zeros(grid.size)
    for d, qs, w in zip(truth.clients, q, client_weights):
        out[np.searchsorted(grid, d.atoms)] += qs * np.asarray(w)
    return out


def draw_distances(truth: TruthModel, draw: EmpiricalDraw) -> tuple[float, float]:
    """``(max_s W(P_s, P_hat_s), W(P, P_hat_pooled))`` for one empirical draw."""
    per_client = max(
        wasserstein_1d(d, DiscreteDist(d.atoms, w)) for d, w in zip(truth.clients, draw.client_weights)
    )
    grid = truth.grid
    pooled = _w1_on_grid(
        _on_grid(truth, truth.q, [d.weights for d in truth.clients]),
        _on_grid(truth, draw.q_hat, draw.client_weights),
        grid,
    )
    return float(per_client), float(pooled)


@dataclass
class ContainmentResult:
    rho: np.ndarray
    p_drfl: np.ndarray
    p_wafl: np.ndarray
    n_trials: int
    resampled: int = 0
    d_drfl: np.ndarray = field(default=None, repr=False)
    d_wafl: np.ndarray = field(default=None, repr=False)

    def standard_error(self) -> np.ndarray:
        """Standard error of ``p_drfl - p_wafl`` treating the curves as independent."""
        n = self.n_trials
        return np.sqrt((self.p_drfl * (1 - self.p_drfl) + self.p_wafl * (1 - self.p_wafl)) / n)

    def smallest_rho(self, level: float, which: str) -> float:
        p = self.p_drfl if which == "drfl" else self.p_wafl
        hit = np.nonzero(p >= level - 1e-12)[0]
        return float(self.rho[hit[0]]) if hit.size else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["rho", "p_drfl", "p_wafl"])
            for r, a, b in zip(self.rho, self.p_drfl, self.p_wafl):
                wr.writerow([repr(float(r)), repr(float(a)), repr(float(b))])


def containment_curve(
    truth: TruthModel | None = None,
    n_samples: int = 1000,
    n_trials: int = 100,
    rho_grid=None,
    seed: int = 0,
) -> ContainmentResult:
    """Probability (over trials) that the true model lies in each ambiguity set."""
    truth = truth or default_truth()
    rho = default_rho_grid() if rho_grid is None else np.asarray(rho_grid, dtype=float)
    d_drfl, d_wafl = np.empty(n_trials), np.empty(n_trials)
    resampled = 0
    for t in range(n_trials):
        rng = np.random.default_rng([seed, t])
        draw = draw_empirical(truth, n_samples, rng)
        while draw is None:
            resampled += 1
            draw = draw_empirical(truth, n_samples, rng)
        d_drfl[t], d_wafl[t] = draw_distances(truth, draw)
    p_drfl = (d_drfl[None, :] <= rho[:, None]).mean(axis=1)
    p_wafl = (d_wafl[None, :] <= rho[:, None]).mean(axis=1)
    return ContainmentResult(rho, p_drfl, p_wafl, n_trials, resampled, d_drfl, d_wafl)


# ----- stage 2: normalized volumes -------------------------------------------


@dataclass
class VolumeResult:
    levels: np.ndarray
    rho_drfl: np.ndarray
    rho_wafl: np.ndarray
    vol_drfl: np.ndarray
    vol_wafl: np.ndarray
    n_random: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["level", "rho_drfl", "rho_wafl", "vol_drfl", "vol_wafl"])
            for row in zip(self.levels, self.rho_drfl, self.rho_wafl, self.vol_drfl, self.vol_wafl):
                wr.writerow([repr(float(v)) for v in row])


def random_models(truth: TruthModel, n_random: int, rng):
    """Candidate models: uniform(0, 1) draws normalized onto each simplex."""
    S = len(truth.clients)
    q = rng.uniform(0.0, 1.0, size=(n_random, S))
    q /= q.sum(axis=1, keepdims=True)
    ws = []
    for d in truth.clients:
        w = rng.uniform(0.0, 1.0, size=(n_random, d.atoms.size))
        ws.append(w / w.sum(axis=1, keepdims=True))
    return q, ws


def candidate_distances(truth: TruthModel, fixed: EmpiricalDraw, n_random: int, rng):
    """Per-candidate ``(max_s W(P'_s, P_hat_s), W(P', P_hat_pooled))``."""
    q, ws = random_models(truth, n_random, rng)
    per_client = np.zeros(n_random)
    for d, w_rand, w_hat in zip(truth.clients, ws, fixed.client_weights):
        per_client = np.maximum(per_client, _w1_on_grid(w_rand, w_hat[None, :], d.atoms))
    grid = truth.grid
    pos = [np.searchsorted(grid, d.atoms) for d in truth.clients]
    pooled_rand = np.zeros((n_random, grid.size))
    for s, (p_idx, w_rand) in enumerate(zip(pos, ws)):
        pooled_rand[:, p_idx] += q[:, s : s + 1] * w_rand
    pooled_hat = _on_grid(truth, fixed.q_hat, fixed.client_weights)
    return per_client, _w1_on_grid(pooled_rand, pooled_hat[None, :], grid)


def volume_ratio(
    truth: TruthModel | None = None,
    guarantee_levels=None,
    n_random: int = 10_000,
    seed: int = 0,
    curve: ContainmentResult | None = None,
    n_samples: int = 1000,
) -> VolumeResult:
    """Fraction of random candidate models inside each ball at matched guarantee levels.

    Each level uses the smallest grid radius whose containment probability
    (from ``curve``) reaches it; levels never reached get ``nan`` radius and
    volume.
    """
    truth = truth or default_truth()
    levels = default_levels() if guarantee_levels is None else np.asarray(guarantee_levels, dtype=float)
    if curve is None:
        curve = containment_curve(truth, n_samples=n_samples, seed=seed)
    rng = np.random.default_rng([seed, 1_000_003])
    fixed = draw_empirical(truth, n_samples, rng)
    while fixed is None:
        fixed = draw_empirical(truth, n_samples, rng)
    d_drfl, d_wafl = candidate_distances(truth, fixed, n_random, rng)
    rho_d = np.array([curve.smallest_rho(l, "drfl") for l in levels])
    rho_w = np.array([curve.smallest_rho(l, "wafl") for l in levels])

    def frac(dist, r):
        return float(np.mean(dist <= r)) if np.isfinite(r) else float("nan")

    return VolumeResult(
        levels,
        rho_d,
        rho_w,
        np.array([frac(d_drfl, r) for r in rho_d]),
        np.array([frac(d_wafl, r) for r in rho_w]),
        n_random,
    )

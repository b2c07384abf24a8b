"""Domain types, configuration schema and validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .projections import normalize_p

LOSS_FAMILIES = ("huber", "svr", "quantile", "hinge", "smooth_hinge", "logistic")
CLASSIFICATION_LOSSES = frozenset({"hinge", "smooth_hinge", "logistic"})
SUPPORT_KINDS = ("unbounded", "box_symmetric", "box_unit", "polyhedral")
METRIC_NORMS = ("l1", "l2", "linf")

# (loss, support) pairs that have an exact finite reformulation.
SUPPORTED_PAIRS = {
    "hinge": {"unbounded", "box_symmetric", "box_unit", "polyhedral"},
    "svr": {"unbounded", "box_symmetric", "box_unit", "polyhedral"},
    "quantile": {"unbounded", "box_symmetric", "box_unit", "polyhedral"},
    "huber": {"unbounded"},
    "smooth_hinge": {"unbounded"},
    "logistic": {"unbounded"},
}


class SpecError(ValueError):
    """Raised by :func:`validate`; ``errors`` lists every violated rule."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _tuple(x):
    if x is None:
        return None
    return tuple(float(v) for v in np.asarray(x, dtype=float).reshape(-1))


def _matrix(x):
    if x is None:
        return None
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    return tuple(tuple(float(v) for v in row) for row in arr)


# ----- data ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sample:
    features: np.ndarray
    label: float


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's local samples; ``X`` is ``(N_s, n)`` and ``y`` is ``(N_s,)``."""

    client_id: int
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"client {self.client_id}: {X.shape[0]} rows but {y.shape[0]} labels")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, client_id: int, samples) -> "ClientDataset":
        samples = list(samples)
        X = np.array([s.features for s in samples], dtype=float, ndmin=2)
        return cls(client_id, X, np.array([s.label for s in samples], dtype=float))

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.X[i], float(self.y[i])) for i in range(self.size)]

    @property
    def size(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    def subset(self, idx) -> "ClientDataset":
        idx = np.asarray(idx, dtype=int)
        return ClientDataset(self.client_id, self.X[idx], self.y[idx])

    def __len__(self):
        return self.size


# ----- problem definition ----------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    family: str
    epsilon: float | None = None

    @property
    def is_classification(self) -> bool:
        return self.family in CLASSIFICATION_LOSSES

    def errors(self) -> list[str]:
        fam, eps = self.family, self.epsilon
        if fam not in LOSS_FAMILIES:
            return [f"unknown loss family {fam!r}"]
        if fam in CLASSIFICATION_LOSSES:
            return [f"epsilon not applicable to {fam} loss"] if eps is not None else []
        if eps is None:
            return [f"{fam} loss requires epsilon"]
        if fam == "huber" and not eps > 0:
            return ["huber epsilon must be > 0"]
        if fam == "svr" and not eps >= 0:
            return ["svr epsilon must be >= 0"]
        if fam == "quantile" and not 0 <= eps <= 1:
            return ["quantile epsilon must lie in [0, 1]"]
        return []


@dataclass(frozen=True)
class SupportSpec:
    """Support of the features (classification) or of (x, y) (regression).

    ``polyhedral`` uses ``C x <= d`` for classification and
    ``C x + c2 y <= d`` for regression.
    """

    kind: str = "unbounded"
    C: tuple | None = None
    c2: tuple | None = None
    d: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "C", _matrix(self.C))
        object.__setattr__(self, "c2", _tuple(self.c2))
        object.__setattr__(self, "d", _tuple(self.d))

    def polyhedron(self, n: int, regression: bool = False):
        """Return ``(C, c2, d)`` arrays describing the support (``r = 0`` rows when unbounded)."""
        if self.kind == "unbounded":
            return np.zeros((0, n)), np.zeros(0), np.zeros(0)
        if self.kind in ("box_symmetric", "box_unit"):
            C = np.vstack([np.eye(n), -np.eye(n)])
            lower = np.ones(n) if self.kind == "box_symmetric" else np.zeros(n)
            return C, np.zeros(2 * n), np.concatenate([np.ones(n), lower])
        C = np.asarray(self.C, dtype=float)
        c2 = np.zeros(C.shape[0]) if self.c2 is None else np.asarray(self.c2, dtype=float)
        return C, c2, np.asarray(self.d, dtype=float)

    def errors(self, n: int | None = None, regression: bool = False) -> list[str]:
        if self.kind not in SUPPORT_KINDS:
            return [f"unknown support kind {self.kind!r}"]
        if self.kind != "polyhedral":
            return []
        errs = []
        if self.C is None or self.d is None:
            return ["polyhedral support needs C and d"]
        C = np.asarray(self.C)
        if C.shape[0] != len(self.d):
            errs.append("polyhedral support: C and d have different row counts")
        if self.c2 is not None and len(self.c2) != C.shape[0]:
            errs.append("polyhedral support: c2 and d have different lengths")
        if n is not None and C.shape[1] != n:
            errs.append(f"polyhedral support: C has {C.shape[1]} columns, features have {n}")
        if not errs and not has_slater_point(self, regression):
            errs.append("polyhedral support has no Slater point")
        return errs


def has_slater_point(support: SupportSpec, regression: bool = False) -> bool:
    """True iff ``{C x (+ c2 y) < d}`` is nonempty (max-margin LP)."""
    from .constraints import Layout, SystemBuilder
    from .inner_solver import ConvexProgram, SolverError, solve_convex

    C = np.asarray(support.C, dtype=float)
    d = np.asarray(support.d, dtype=float)
    c2 = np.zeros(C.shape[0]) if support.c2 is None else np.asarray(support.c2, dtype=float)
    r, n = C.shape
    layout = Layout([("x", n), ("y", 1), ("margin", 1)])
    sb = SystemBuilder(layout)
    g = sb.group("slater")
    for k in range(r):
        terms = [("x", j, C[k, j]) for j in range(n)]
        if regression:
            terms.append(("y", 0, c2[k]))
        sb.row(terms + [("margin", 0, 1.0)], d[k], g)
    sb.bound("margin", -1.0, 1.0)
    if not regression:
        sb.bound("y", 0.0, 0.0)
    q = layout.join({"margin": -1.0})
    try:
        sol = solve_convex(ConvexProgram(sb.build(), q), tol=1e-9)
    except SolverError:
        return False
    return float(sol.x[layout["margin"]][0]) > 1e-9


@dataclass(frozen=True)
class RobustnessSpec:
    rho: tuple
    kappa: float = 1.0
    metric_norm: str = "l1"

    def __post_init__(self):
        rho = self.rho
        if np.ndim(rho) == 0:
            rho = (rho,)
        object.__setattr__(self, "rho", _tuple(rho))

    def rho_for(self, client_id: int) -> float:
        if len(self.rho) == 1:
            return self.rho[0]
        return self.rho[client_id - 1]

    def errors(self) -> list[str]:
        errs = []
        if any(r < 0 for r in self.rho):
            errs.append("rho must be nonnegative for every client")
        if not self.kappa > 0:
            errs.append("kappa must be > 0")
        if self.metric_norm not in METRIC_NORMS:
            errs.append(f"unknown metric norm {self.metric_norm!r}")
        return errs


@dataclass(frozen=True)
class WeightSetSpec:
    """``{q in simplex : ||q - q_hat||_p <= theta}``; ``q_hat=None`` resolves by ``mode``."""

    theta: float
    p: float = 1.0
    q_hat: tuple | None = None
    mode: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "p", normalize_p(self.p))
        object.__setattr__(self, "q_hat", _tuple(self.q_hat))

    def resolve(self, sizes) -> "WeightSetSpec":
        if self.q_hat is not None:
            return self
        sizes = np.asarray(sizes, dtype=float)
        if self.mode == "uniform":
            q = np.full(sizes.size, 1.0 / sizes.size)
        elif self.mode == "proportional":
            q = sizes / sizes.sum()
        else:
            raise SpecError([f"unknown q_hat mode {self.mode!r}"])
        return replace(self, q_hat=_tuple(q))

    def errors(self) -> list[str]:
        errs = []
        if not self.theta >= 0:
            errs.append("theta must be >= 0")
        if self.mode not in ("uniform", "proportional"):
            errs.append(f"unknown q_hat mode {self.mode!r}")
        if self.q_hat is not None:
            q = np.asarray(self.q_hat)
            if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
                errs.append("q_hat must lie in the probability simplex")
        return errs


@dataclass(frozen=True)
class ProblemSpec:
    loss: LossSpec
    support: SupportSpec
    robustness: RobustnessSpec
    weights: WeightSetSpec
    n_features: int | None = None

    @property
    def is_classification(self) -> bool:
        return self.loss.is_classification

    def resolved(self, clients) -> "ProblemSpec":
        """Fill per-client defaults (broadcast rho, q_hat from mode, n)."""
        S = len(clients)
        rho = self.robustness.rho
        if len(rho) == 1 and S > 1:
            rho = rho * S
        n = self.n_features if self.n_features is not None else clients[0].n_features
        return replace(
            self,
            robustness=replace(self.robustness, rho=rho),
            weights=self.weights.resolve([c.size for c in clients]),
            n_features=n,
        )

    def to_dict(self) -> dict:
        sup = {"kind": self.support.kind}
        for key in ("C", "c2", "d"):
            val = getattr(self.support, key)
            if val is not None:
                sup[key] = [list(r) for r in val] if key == "C" else list(val)
        p = self.weights.p
        out = {
            "loss": {"family": self.loss.family, "epsilon": self.loss.epsilon},
            "support": sup,
            "robustness": {
                "rho": list(self.robustness.rho),
                "kappa": self.robustness.kappa,
                "metric_norm": self.robustness.metric_norm,
            },
            "weights": {
                "theta": self.weights.theta,
                "p": "inf" if math.isinf(p) else int(p),
                "q_hat": None if self.weights.q_hat is None else list(self.weights.q_hat),
                "mode": self.weights.mode,
            },
            "n_features": self.n_features,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        loss = d.get("loss", {})
        rob = d.get("robustness", {})
        wts = d.get("weights", {})
        sup = d.get("support", {}) or {}
        q_hat = wts.get("q_hat")
        mode = wts.get("mode", "uniform")
        if isinstance(q_hat, str):
            mode, q_hat = q_hat, None
        return cls(
            loss=LossSpec(loss["family"], loss.get("epsilon")),
            support=SupportSpec(sup.get("kind", "unbounded"), sup.get("C"), sup.get("c2"), sup.get("d")),
            robustness=RobustnessSpec(rob.get("rho", 0.0), float(rob.get("kappa", 1.0)), rob.get("metric_norm", "l1")),
            weights=WeightSetSpec(float(wts.get("theta", 0.1)), wts.get("p", 1), q_hat, mode),
            n_features=d.get("n_features"),
        )


def validate(spec: ProblemSpec, clients=None) -> ProblemSpec:
    """Return ``spec`` unchanged if every rule holds, else raise :class:`SpecError`.

    With ``clients`` the per-client rules (dimensions, labels, lengths of
    ``rho`` and ``q_hat``) are checked as well.
    """
    errs = []
    errs += spec.loss.errors()
    errs += spec.robustness.errors()
    errs += spec.weights.errors()
    if spec.loss.family in SUPPORTED_PAIRS and spec.support.kind in SUPPORT_KINDS:
        if spec.support.kind not in SUPPORTED_PAIRS[spec.loss.family]:
            errs.append(f"{spec.loss.family} loss has no exact reformulation with {spec.support.kind} support")
    errs += spec.support.errors(spec.n_features, regression=not spec.is_classification)
    if clients is not None:
        clients = list(clients)
        S = len(clients)
        if S == 0:
            errs.append("at least one client is required")
        if len(spec.robustness.rho) not in (1, S):
            errs.append(f"rho has {len(spec.robustness.rho)} entries for {S} clients")
        if spec.weights.q_hat is not None and len(spec.weights.q_hat) != S:
            errs.append(f"q_hat has {len(spec.weights.q_hat)} entries for {S} clients")
        n = spec.n_features
        for c in clients:
            if c.size < 1:
                errs.append(f"client {c.client_id} is empty")
                continue
            if n is None:
                n = c.n_features
            if c.n_features != n:
                errs.append(f"client {c.client_id}: features have length {c.n_features}, expected {n}")
            if spec.is_classification and not np.all(np.isin(c.y, (-1.0, 1.0))):
                errs.append(f"client {c.client_id}: classification labels must be -1 or +1")
        ids = sorted(c.client_id for c in clients)
        if ids != list(range(1, S + 1)):
            errs.append("client ids must be 1..S")
    if errs:
        raise SpecError(errs)
    return spec


# ----- solver configuration and state ---------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    c: float = 1.0
    max_iters: int = 10_000
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    minibatch_size: int | None = None
    seed: int = 0
    inner_tol: float = 1e-7
    threads: int = 1

    def errors(self, clients=None) -> list[str]:
        errs = []
        if not self.c > 0:
            errs.append("stepsize c must be > 0")
        if not (self.tol_primal > 0 and self.tol_dual > 0 and self.inner_tol > 0):
            errs.append("tolerances must be > 0")
        if self.max_iters < 1:
            errs.append("max_iters must be >= 1")
        if self.minibatch_size is not None:
            if self.minibatch_size < 1:
                errs.append("minibatch_size must be >= 1")
            elif clients is not None and any(self.minibatch_size > c.size for c in clients):
                errs.append("minibatch_size exceeds a client's sample count")
        return errs


@dataclass
class SolverState:
    """Server-side iterates; all vectors of length S except ``w``."""

    w: np.ndarray
    t: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    gamma: float
    sigma: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, n: int, S: int) -> "SolverState":
        return cls(np.zeros(n), np.zeros(S), np.zeros(S), np.zeros(S), 0.0, np.zeros(S))


@dataclass
class ClientState:
    """Client-side iterates. ``x`` is the full subproblem vector (warm start)."""

    client_id: int
    rho: float
    lam: float
    alpha: np.ndarray
    w_hat: np.ndarray
    psi: np.ndarray
    zeta: float = 0.0
    aux: dict = field(default_factory=dict)
    x: np.ndarray | None = None

    @property
    def pi(self) -> float:
        """Worst-case loss surrogate ``rho * lam + mean(alpha)``."""
        return float(self.rho * self.lam + np.mean(self.alpha))

    @classmethod
    def zeros(cls, client_id: int, rho: float, n: int, n_alpha: int) -> "ClientState":
        return cls(client_id, rho, 0.0, np.zeros(n_alpha), np.zeros(n), np.zeros(n))

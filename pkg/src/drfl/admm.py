"""Federated linearized ADMM for the convex reformulation.

The server owns ``w, t, z, eta, gamma`` and the multipliers; each client owns
its samples and the block ``(lam_s, alpha_s, w_hat_s)``.  Per iteration the
server sends ``(w, z_s, psi_s, zeta_s)`` to every client and receives back
only ``(pi_s, w_hat_s)``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .inner_solver import ConvexProgram, SolverError, workspace
from .model import ClientDataset, ClientState, ProblemSpec, SolverConfig, SolverState, SpecError, validate
from .omega import build_omega, pi_vector, worst_case_client_loss
from .projections import prox_dual_norm
from .weights import worst_case_value

log = logging.getLogger(__name__)

CLIENT_PAYLOAD = ("pi", "w_hat")
SERVER_PAYLOAD = ("w", "z", "psi", "zeta")


# ----- server operators ------------------------------------------------------


def update_w(w_hats, psis, c: float) -> np.ndarray:
    w_hats = np.atleast_2d(np.asarray(w_hats, dtype=float))
    psis = np.atleast_2d(np.asarray(psis, dtype=float))
    if w_hats.shape != psis.shape:
        raise ValueError("local models and multipliers have different shapes")
    S = w_hats.shape[0]
    return (c * w_hats - psis).sum(axis=0) / (c * S)


def update_z(t_bar, z_bar, eta, gamma, pi, zeta, sigma, c: float, S: int) -> np.ndarray:
    t_bar, z_bar, eta, pi, zeta, sigma = (np.asarray(a, dtype=float) for a in (t_bar, z_bar, eta, pi, zeta, sigma))
    if not (t_bar.shape == z_bar.shape == eta.shape == pi.shape == zeta.shape == sigma.shape == (S,)):
        raise ValueError(f"all vectors must have length {S}")
    return (pi + t_bar - z_bar - gamma - eta + 2 * S * z_bar + (zeta + sigma) / c) / (1 + 2 * S)


def t_step_point(t_bar, z_bar, eta, gamma, sigma, q_hat, c: float, S: int) -> np.ndarray:
    """Linearized gradient point ``u`` fed to the prox in the t-update."""
    t_bar = np.asarray(t_bar, dtype=float)
    r = t_bar - z_bar - gamma - eta
    return t_bar - (np.asarray(q_hat) + sigma + c * r) / (2 * S * c)


def update_t(t_bar, z_bar, eta, gamma, sigma, q_hat, theta: float, p, c: float, S: int) -> np.ndarray:
    u = t_step_point(t_bar, z_bar, eta, gamma, sigma, q_hat, c, S)
    scale = theta / (2 * S * c)
    # theta = 0 (or a scale that underflows) means no norm term
    if scale == 0:
        return u
    return prox_dual_norm(u, scale, p)


def update_eta(t, z, eta_bar, gamma_bar, sigma, c: float, S: int) -> np.ndarray:
    t, z, eta_bar, sigma = (np.asarray(a, dtype=float) for a in (t, z, eta_bar, sigma))
    return np.maximum(eta_bar + (sigma / c - gamma_bar - eta_bar + t - z) / (2 * S), 0.0)


def update_gamma(t, z, eta_bar, gamma_bar: float, sigma, c: float, S: int) -> float:
    r = np.asarray(t) - np.asarray(z) - gamma_bar - np.asarray(eta_bar)
    return float(gamma_bar + (1.0 + np.sum(sigma) + c * np.sum(r)) / (2 * S * c))


def dual_update(state: SolverState, clients: list[ClientState], c: float) -> None:
    """Multiplier ascent along the three equality residuals (in place)."""
    state.sigma = state.sigma + c * (state.t - state.z - state.gamma - state.eta)
    for s, cl in enumerate(clients):
        cl.psi = cl.psi + c * (state.w - cl.w_hat)
        cl.zeta = cl.zeta + c * (cl.pi - state.z[s])


def primal_residuals(state: SolverState, clients: list[ClientState]) -> tuple[float, float, float]:
    """Sup-norms of ``t - z - gamma e - eta``, ``w - w_hat_s`` and ``pi_s - z_s``."""
    r_t = float(np.max(np.abs(state.t - state.z - state.gamma - state.eta)))
    r_w = max(float(np.max(np.abs(state.w - cl.w_hat), initial=0.0)) for cl in clients)
    r_pi = max(abs(cl.pi - state.z[s]) for s, cl in enumerate(clients))
    return r_t, r_w, r_pi


def split_objective(pi, q_hat, theta: float, p) -> float:
    """Reformulated objective at ``z = pi`` with the best ``gamma`` and ``eta``.

    Minimizing over ``gamma, eta`` leaves the support function of the weight
    set, i.e. the worst-case weighted average of ``pi``.
    """
    return worst_case_value(pi, q_hat, theta, p)


# ----- messages and records --------------------------------------------------


@dataclass(frozen=True)
class Message:
    direction: str  # "server->client" or "client->server"
    client_id: int
    iteration: int
    payload: dict

    @property
    def n_scalars(self) -> int:
        return int(sum(np.size(v) for v in self.payload.values()))


def audit_messages(messages, n: int) -> list[str]:
    """Return the list of boundary violations (empty when the log is clean)."""
    problems = []
    for m in messages:
        if m.direction != "client->server":
            continue
        if tuple(sorted(m.payload)) != tuple(sorted(CLIENT_PAYLOAD)):
            problems.append(f"iteration {m.iteration}, client {m.client_id}: keys {sorted(m.payload)}")
        elif m.n_scalars != n + 1:
            problems.append(f"iteration {m.iteration}, client {m.client_id}: {m.n_scalars} scalars")
    return problems


@dataclass
class RunRecord:
    residual_t: list = field(default_factory=list)
    residual_w: list = field(default_factory=list)
    residual_pi: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    subsets: dict = field(default_factory=dict)
    state: SolverState | None = None
    clients: list = field(default_factory=list)
    converged: bool = False
    final_objective: float = math.nan
    worst_case_losses: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.objective)

    @property
    def z(self) -> np.ndarray:
        return self.state.z.copy()

    @property
    def pi(self) -> np.ndarray:
        return np.array([cl.pi for cl in self.clients])

    def max_primal_residual(self) -> float:
        if not self.objective:
            return math.nan
        return max(self.residual_t[-1], self.residual_w[-1], self.residual_pi[-1])

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["iter", "objective", "residual_t", "residual_w", "residual_pi", "dual_residual", "time_ms"])
            for k in range(self.iterations):
                wr.writerow(
                    [
                        k + 1,
                        repr(self.objective[k]),
                        repr(self.residual_t[k]),
                        repr(self.residual_w[k]),
                        repr(self.residual_pi[k]),
                        repr(self.dual_residual[k]),
                        f"{1e3 * self.wall_time[k]:.3f}",
                    ]
                )


# ----- client ----------------------------------------------------------------


class ClientError(RuntimeError):
    def __init__(self, client_id: int, cause: Exception):
        super().__init__(f"client {client_id}: {cause}")
        self.client_id = client_id
        self.cause = cause


class Client:
    """Holds one client's samples; answers server messages with ``(pi, w_hat)``."""

    def __init__(self, data: ClientDataset, spec: ProblemSpec, config: SolverConfig):
        self._data = data
        self.client_id = data.client_id
        self.rho = spec.robustness.rho_for(data.client_id)
        self._spec = spec
        self._c = config.c
        self._tol = config.inner_tol
        self._batch = config.minibatch_size
        if self._batch is not None and self._batch >= data.size:
            self._batch = None
        self._rng = np.random.default_rng([config.seed, data.client_id])
        self.subsets: list[np.ndarray] = []
        n = data.n_features
        n_alpha = data.size if self._batch is None else self._batch
        self.state = ClientState.zeros(data.client_id, self.rho, n, n_alpha)
        self._ws = None
        if self._batch is None:
            self._ws, self._cs, self._g = self._workspace(data)

    def _workspace(self, data: ClientDataset):
        spec = self._spec
        cs = build_omega(
            spec.loss,
            spec.support,
            spec.robustness.kappa,
            spec.robustness.metric_norm,
            data,
            empirical=self.rho == 0,
        )
        g = pi_vector(cs, self.rho)
        sl = cs.layout["w"]
        idx = np.arange(sl.start, sl.stop)
        Ew = sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, cs.n_vars))
        G = sp.csr_matrix(g)
        P = self._c * (Ew.T @ Ew + G.T @ G)
        prog = ConvexProgram(cs, np.zeros(cs.n_vars), P)
        return workspace(prog, self._tol), cs, g

    def _linear_term(self, cs, g, w, z_s, psi, zeta):
        q = (zeta - self._c * z_s) * g
        q[cs.layout["w"]] += -psi - self._c * w
        return q

    def handle(self, msg: Message) -> Message:
        p = msg.payload
        w, z_s, psi, zeta = p["w"], float(p["z"]), p["psi"], float(p["zeta"])
        try:
            if self._batch is None:
                ws, cs, g = self._ws, self._cs, self._g
                sol = ws.solve(q=self._linear_term(cs, g, w, z_s, psi, zeta), warm=self.state.x)
            else:
                idx = np.sort(self._rng.choice(self._data.size, size=self._batch, replace=False))
                self.subsets.append(idx)
                ws, cs, g = self._workspace(self._data.subset(idx))
                sol = ws.solve(q=self._linear_term(cs, g, w, z_s, psi, zeta))
        except SolverError as exc:
            raise ClientError(self.client_id, exc) from exc
        parts = cs.layout.split(sol.x)
        st = self.state
        st.lam = float(parts["lam"][0])
        st.alpha = parts["alpha"]
        st.w_hat = parts["w"]
        st.aux = {k: v for k, v in parts.items() if k not in ("lam", "alpha", "w")}
        st.x = sol.x if self._batch is None else None
        st.psi = np.array(psi, dtype=float)
        st.zeta = zeta
        return Message("client->server", self.client_id, msg.iteration, {"pi": st.pi, "w_hat": st.w_hat.copy()})


def client_update(client: Client, w, z_s, psi, zeta, iteration: int = 0) -> tuple[ClientState, float]:
    """Run one client step directly (outside a federated loop)."""
    msg = Message("server->client", client.client_id, iteration, {"w": w, "z": z_s, "psi": psi, "zeta": zeta})
    reply = client.handle(msg)
    return client.state, float(reply.payload["pi"])


# ----- driver ----------------------------------------------------------------


def solve(
    spec: ProblemSpec,
    datasets: list[ClientDataset],
    config: SolverConfig = SolverConfig(),
    log_messages: bool = True,
    evaluate_final: bool = True,
    trace_path=None,
) -> tuple[np.ndarray, RunRecord]:
    """Run the federated ADMM; returns the server model and the run record.

    Stops when every primal residual family (sup-norm) is below
    ``tol_primal`` and ``c`` times the largest server iterate change is below
    ``tol_dual``.  On hitting ``max_iters`` the last iterate is returned
    with ``record.converged = False``.
    """
    validate(spec, datasets)
    errs = config.errors(datasets)
    if errs:
        raise SpecError(errs)
    spec = spec.resolved(datasets)
    datasets = sorted(datasets, key=lambda d: d.client_id)
    S, n = len(datasets), spec.n_features
    q_hat = np.asarray(spec.weights.q_hat)
    theta, p, c = spec.weights.theta, spec.weights.p, config.c

    clients = [Client(d, spec, config) for d in datasets]
    state = SolverState.zeros(n, S)
    # server-side copies of what the clients last reported, and the multipliers
    pis = np.zeros(S)
    w_hats = np.zeros((S, n))
    psi = np.zeros((S, n))
    zeta = np.zeros(S)
    rec = RunRecord(state=state, clients=[cl.state for cl in clients])
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    t0 = time.perf_counter()
    try:
        for k in range(config.max_iters):
            w_old, t_old, z_old = state.w, state.t, state.z
            # server primal steps in the order w, z, t, eta, gamma
            state.w = update_w(w_hats, psi, c)
            state.z = update_z(t_old, z_old, state.eta, state.gamma, pis, zeta, state.sigma, c, S)
            state.t = update_t(t_old, z_old, state.eta, state.gamma, state.sigma, q_hat, theta, p, c, S)
            eta_new = update_eta(state.t, state.z, state.eta, state.gamma, state.sigma, c, S)
            state.gamma = update_gamma(state.t, state.z, state.eta, state.gamma, state.sigma, c, S)
            state.eta = eta_new
            outgoing = [
                Message(
                    "server->client",
                    cl.client_id,
                    k,
                    {"w": state.w.copy(), "z": float(state.z[s]), "psi": psi[s].copy(), "zeta": float(zeta[s])},
                )
                for s, cl in enumerate(clients)
            ]
            if pool is None:
                replies = [cl.handle(m) for cl, m in zip(clients, outgoing)]
            else:
                replies = list(pool.map(lambda a: a[0].handle(a[1]), zip(clients, outgoing)))
            if log_messages:
                rec.messages.extend(outgoing)
                rec.messages.extend(replies)
            pis = np.array([r.payload["pi"] for r in replies])
            w_hats = np.array([r.payload["w_hat"] for r in replies])
            # multiplier ascent
            state.sigma = state.sigma + c * (state.t - state.z - state.gamma - state.eta)
            psi = psi + c * (state.w - w_hats)
            zeta = zeta + c * (pis - state.z)
            state.iteration = k + 1

            r_t = float(np.max(np.abs(state.t - state.z - state.gamma - state.eta)))
            r_w = float(np.max(np.abs(state.w - w_hats), initial=0.0))
            r_pi = float(np.max(np.abs(pis - state.z)))
            change = max(
                float(np.max(np.abs(state.w - w_old), initial=0.0)),
                float(np.max(np.abs(state.z - z_old))),
                float(np.max(np.abs(state.t - t_old))),
            )
            rec.residual_t.append(r_t)
            rec.residual_w.append(r_w)
            rec.residual_pi.append(r_pi)
            rec.dual_residual.append(c * change)
            rec.objective.append(split_objective(pis, q_hat, theta, p))
            rec.wall_time.append(time.perf_counter() - t0)
            if max(r_t, r_w, r_pi) < config.tol_primal and c * change < config.tol_dual:
                rec.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    for s, cl in enumerate(clients):
        cl.state.psi, cl.state.zeta = psi[s].copy(), float(zeta[s])
    for cl in clients:
        if cl.subsets:
            rec.subsets[cl.client_id] = cl.subsets
    if not rec.converged:
        log.warning("stopped after %d iterations without meeting the tolerances", rec.iterations)
    if evaluate_final:
        rec.worst_case_losses, rec.final_objective = evaluate_objective(spec, datasets, state.w)
    if trace_path is not None:
        rec.write_trace(trace_path)
    return state.w.copy(), rec


def evaluate_objective(spec: ProblemSpec, datasets, w) -> tuple[np.ndarray, float]:
    """Per-client worst-case losses at ``w`` and the weighted worst case over the weight set."""
    spec = spec.resolved(datasets)
    vals = np.array(
        [worst_case_client_loss(w, d, spec.robustness, spec.loss, spec.support) for d in datasets]
    )
    return vals, split_objective(vals, spec.weights.q_hat, spec.weights.theta, spec.weights.p)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from drfl import admm
from drfl.admm import (
    Client,
    Message,
    audit_messages,
    client_update,
    dual_update,
    update_eta,
    update_gamma,
    update_t,
    update_w,
    update_z,
)
from drfl.model import ClientDataset, ClientState, LossSpec, ProblemSpec, RobustnessSpec, SolverConfig, SolverState, SupportSpec, WeightSetSpec
from drfl.projections import norm
from drfl.reference import centralized_solve
from frozen import DRFL_ORACLE
from instances import as_pairs, tiny_svm
from oracles import drfl_box_hinge, erm_hinge

seeds = st.integers(0, 2**32 - 1)


def rand(seed, S=3, n=2):
    rng = np.random.default_rng(seed)
    return rng, dict(
        t_bar=rng.normal(size=S),
        z_bar=rng.normal(size=S),
        eta=np.abs(rng.normal(size=S)),
        gamma=float(rng.normal()),
        pi=rng.normal(size=S),
        zeta=rng.normal(size=S),
        sigma=rng.normal(size=S),
        c=float(rng.uniform(0.2, 3)),
    )


# ----- operator examples -----------------------------------------------------


def test_update_w_examples():
    np.testing.assert_allclose(update_w([[1, 0], [0, 1]], np.zeros((2, 2)), 1.0), [0.5, 0.5])
    wbar = np.array([0.3, -2.0])
    np.testing.assert_allclose(update_w([wbar, wbar, wbar], np.zeros((3, 2)), 0.7), wbar)


def test_update_z_examples():
    one, zero = np.ones(1), np.zeros(1)
    assert update_z(one, one, zero, 0.0, one, zero, zero, 1.0, 1)[0] == pytest.approx(1.0)
    np.testing.assert_array_equal(update_z(*(np.zeros(2),) * 3, 0.0, *(np.zeros(2),) * 3, 1.0, 2), np.zeros(2))


def test_update_t_examples():
    z = np.zeros(2)
    # u = t_bar - (q_hat + sigma + c r) / (2 S c) with q_hat = 0 and r = 0 reduces to t_bar
    np.testing.assert_array_equal(update_t(z, z, z, 0.0, z, z, 0.3, 1, 1.0, 2), z)
    small = np.array([0.01, -0.02])
    np.testing.assert_array_equal(update_t(small, small, z, 0.0, z, z, 1.0, 1, 1.0, 2), z)
    out = update_t(np.array([3.0, 4.0]), np.array([3.0, 4.0]), z, 0.0, z, z, 2.0, 2, 1.0, 1)
    # S = 1 with a 2-vector is only a shape convenience here: scale = theta / (2 S c) = 1
    np.testing.assert_allclose(out, [2.4, 3.2])


def test_update_eta_examples():
    assert update_eta([1.0], [1.0], [0.0], 0.0, [-2.0], 1.0, 1)[0] == 0.0
    np.testing.assert_array_equal(update_eta([1.0, 2.0], [1.0, 2.0], [0, 0], 0.0, [0, 0], 1.0, 2), [0.0, 0.0])


def test_update_gamma_examples():
    assert update_gamma([1.0], [1.0], [0.0], 0.0, [0.0], 1.0, 1) == pytest.approx(0.5)
    assert update_gamma([1.0, 2.0], [1.0, 2.0], [0, 0], 0.0, [-0.5, -0.5], 1.0, 2) == pytest.approx(0.0)


# ----- operator oracles: minimize the proximal subproblems numerically ------


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_update_w_first_order_oracle(seed):
    rng = np.random.default_rng(seed)
    w_hats, psis, c = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.uniform(0.1, 3)
    f = lambda w: np.sum(psis @ w) + 0.5 * c * np.sum((w - w_hats) ** 2)
    ref = minimize(f, np.zeros(2), tol=1e-12).x
    np.testing.assert_allclose(update_w(w_hats, psis, c), ref, atol=1e-6)


def _linearized(t_bar, z_bar, eta, gamma, sigma, c):
    return t_bar - z_bar - gamma - eta


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_update_z_quadratic_oracle(seed):
    rng, a = rand(seed)
    S = 3
    r = _linearized(a["t_bar"], a["z_bar"], a["eta"], a["gamma"], a["sigma"], a["c"])
    c = a["c"]

    def f(z):
        return (
            -a["sigma"] @ z
            - c * r @ (z - a["z_bar"])
            + S * c * np.sum((z - a["z_bar"]) ** 2)
            - a["zeta"] @ z
            + 0.5 * c * np.sum((a["pi"] - z) ** 2)
        )

    ref = minimize(f, np.zeros(S), tol=1e-12).x
    got = update_z(a["t_bar"], a["z_bar"], a["eta"], a["gamma"], a["pi"], a["zeta"], a["sigma"], c, S)
    np.testing.assert_allclose(got, ref, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from([1, 2, np.inf]), st.floats(0.0, 2.0))
def test_update_t_local_optimality(seed, p, theta):
    rng, a = rand(seed)
    S, c = 3, a["c"]
    q_hat = np.full(S, 1 / S)
    r = _linearized(a["t_bar"], a["z_bar"], a["eta"], a["gamma"], a["sigma"], c)
    dual = {1: np.inf, 2: 2, np.inf: 1}[p]

    def f(t):
        return q_hat @ t + theta * norm(t, dual) + a["sigma"] @ t + c * r @ (t - a["t_bar"]) + S * c * np.sum((t - a["t_bar"]) ** 2)

    t = update_t(a["t_bar"], a["z_bar"], a["eta"], a["gamma"], a["sigma"], q_hat, theta, p, c, S)
    base = f(t)
    for _ in range(100):
        assert base <= f(t + rng.normal(scale=1e-3, size=S)) + 1e-12


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_update_eta_and_gamma_oracles(seed):
    rng, a = rand(seed)
    S, c = 3, a["c"]
    t, z = rng.normal(size=S), rng.normal(size=S)
    r = t - z - a["gamma"] - a["eta"]

    def f_eta(eta):
        return -a["sigma"] @ eta - c * r @ (eta - a["eta"]) + S * c * np.sum((eta - a["eta"]) ** 2)

    ref = minimize(f_eta, np.ones(S), bounds=[(0, None)] * S, tol=1e-14).x
    eta = update_eta(t, z, a["eta"], a["gamma"], a["sigma"], c, S)
    assert np.all(eta >= 0)
    np.testing.assert_allclose(eta, ref, atol=1e-5)

    def f_gamma(g):
        g = g[0]
        return -g - a["sigma"].sum() * g - c * r.sum() * (g - a["gamma"]) + S * c * (g - a["gamma"]) ** 2

    ref_g = minimize(f_gamma, [0.0], tol=1e-14).x[0]
    assert update_gamma(t, z, a["eta"], a["gamma"], a["sigma"], c, S) == pytest.approx(ref_g, abs=1e-5)


def test_dual_update_examples():
    st_ = SolverState(np.zeros(2), np.ones(2), np.zeros(2), np.zeros(2), 0.0, np.zeros(2))
    cl = [ClientState(1, 0.1, 0.0, np.zeros(1), np.zeros(2), np.zeros(2), 0.0)]
    dual_update(st_, cl, 1.0)
    np.testing.assert_array_equal(st_.sigma, [1.0, 1.0])
    st2 = SolverState(np.ones(2), np.zeros(2), np.zeros(2), np.zeros(2), 0.0, np.full(2, 0.3))
    cl2 = [ClientState(1, 0.0, 0.0, np.zeros(1), np.ones(2), np.full(2, 0.2), 0.4)]
    st2.z[0] = 0.0
    dual_update(st2, cl2, 2.0)
    np.testing.assert_array_equal(st2.sigma, [0.3, 0.3])
    np.testing.assert_array_equal(cl2[0].psi, [0.2, 0.2])
    assert cl2[0].zeta == 0.4


# ----- client step -----------------------------------------------------------


def _client(spec, data, **cfg):
    return Client(data, spec.resolved([data]), SolverConfig(**cfg))


def test_client_zero_model_point():
    spec, clients = tiny_svm(0)
    cl = _client(spec, clients[0])
    state, pi = client_update(cl, np.zeros(2), 1.0, np.zeros(2), 0.0)
    assert pi == pytest.approx(1.0, abs=1e-4)
    np.testing.assert_allclose(state.w_hat, 0.0, atol=1e-5)
    np.testing.assert_allclose(state.alpha, 1.0, atol=1e-4)


def test_client_pi_decreases_with_zeta():
    spec, clients = tiny_svm(1)
    pis = []
    for zeta in (0.0, 1.0, 3.0):
        cl = _client(spec, clients[0])
        pis.append(client_update(cl, np.array([0.5, -0.5]), 0.5, np.zeros(2), zeta)[1])
    assert pis[1] < pis[0] and pis[2] < pis[1]


def test_client_matches_high_accuracy_resolve():
    from drfl.inner_solver import ConvexProgram, solve_convex

    spec, clients = tiny_svm(2)
    cl = _client(spec, clients[0])
    w, z, psi, zeta = np.array([0.3, 0.1]), 0.7, np.array([0.2, -0.1]), 0.05
    state, pi = client_update(cl, w, z, psi, zeta)
    prog = ConvexProgram(cl._cs, cl._linear_term(cl._cs, cl._g, w, z, psi, zeta), cl._ws.prog.P)
    ref = solve_convex(prog, tol=1e-9)
    assert prog.objective(state.x) == pytest.approx(ref.objective, abs=1e-4)


def test_client_reply_payload():
    spec, clients = tiny_svm(3)
    cl = _client(spec, clients[0])
    reply = cl.handle(Message("server->client", 1, 0, {"w": np.zeros(2), "z": 0.0, "psi": np.zeros(2), "zeta": 0.0}))
    assert set(reply.payload) == {"pi", "w_hat"} and reply.n_scalars == 3


def test_minibatch_full_size_equals_full_batch():
    spec, clients = tiny_svm(4)
    args = (np.array([0.2, 0.4]), 0.6, np.zeros(2), 0.1)
    full = client_update(_client(spec, clients[0]), *args)[1]
    same = client_update(_client(spec, clients[0], minibatch_size=3), *args)[1]
    assert same == pytest.approx(full, abs=1e-6)


def test_minibatch_single_sample_client():
    spec, _ = tiny_svm(5)
    one = ClientDataset(1, [[0.2, -0.3]], [1.0])
    args = (np.array([0.2, 0.4]), 0.6, np.zeros(2), 0.1)
    full = client_update(_client(spec, one), *args)[1]
    mb = client_update(_client(spec, one, minibatch_size=1), *args)[1]
    assert mb == pytest.approx(full, abs=1e-6)


def test_minibatch_subsets_change():
    spec, clients = tiny_svm(6, N=8)
    cl = _client(spec, clients[0], minibatch_size=3, seed=11)
    for k in range(6):
        client_update(cl, np.zeros(2), 0.5, np.zeros(2), 0.0, iteration=k)
    subsets = [tuple(s) for s in cl.subsets]
    assert len(subsets) == 6
    assert any(a != b for a, b in zip(subsets, subsets[1:]))


# ----- full runs -------------------------------------------------------------


def test_separable_toy_data_is_fit():
    X1 = np.array([[0.8, 0.6], [0.9, 0.7], [-0.7, -0.9]])
    X2 = np.array([[0.6, 0.9], [-0.8, -0.6], [-0.9, -0.8]])
    y1, y2 = np.array([1.0, 1.0, -1.0]), np.array([1.0, -1.0, -1.0])
    clients = [ClientDataset(1, X1, y1), ClientDataset(2, X2, y2)]
    spec = ProblemSpec(LossSpec("hinge"), SupportSpec("box_symmetric"), RobustnessSpec((1e-4,), 0.5), WeightSetSpec(0.1))
    w, rec = admm.solve(spec, clients, SolverConfig(tol_primal=1e-4, tol_dual=1e-4))
    X, y = np.vstack([X1, X2]), np.concatenate([y1, y2])
    assert np.mean(np.where(X @ w >= 0, 1, -1) == y) == 1.0


def test_frozen_oracle_reproduces():
    spec, clients = tiny_svm(0)
    _, v = drfl_box_hinge(as_pairs(clients), spec.robustness.rho, 0.5, 0.1, np.full(2, 0.5))
    assert v == pytest.approx(DRFL_ORACLE[0], abs=1e-7)


@pytest.mark.parametrize("seed", [0, 5, 9])
def test_admm_and_reference_match_oracle(seed):
    spec, clients = tiny_svm(seed)
    _, ref, _ = centralized_solve(spec, clients)
    assert ref == pytest.approx(DRFL_ORACLE[seed], abs=1e-6)
    w, rec = admm.solve(spec, clients)
    assert rec.converged
    assert abs(rec.final_objective - DRFL_ORACLE[seed]) <= 1e-3 * abs(DRFL_ORACLE[seed])
    assert audit_messages(rec.messages, 2) == []
    obj = np.array(rec.objective)
    assert np.all(np.isfinite(obj)) and np.all(np.diff(np.minimum.accumulate(obj)) <= 0)


def test_zero_radius_tiny_theta_matches_erm_oracle():
    spec, clients = tiny_svm(3, rho=(0.0,), theta=1e-8)
    _, ref = erm_hinge(as_pairs(clients), np.full(2, 0.5))
    w, rec = admm.solve(spec, clients)
    assert rec.final_objective == pytest.approx(ref, abs=1e-4)


def test_theta_zero_path():
    spec, clients = tiny_svm(7, theta=0.0)
    w, rec = admm.solve(spec, clients)
    _, ref, _ = centralized_solve(spec, clients, mode="weighted")
    assert rec.converged and rec.final_objective == pytest.approx(ref, rel=1e-3)


def test_nonconvergence_returns_last_iterate():
    spec, clients = tiny_svm(8)
    w, rec = admm.solve(spec, clients, SolverConfig(max_iters=2))
    assert not rec.converged and rec.iterations == 2 and w.shape == (2,)


def test_audit_flags_extra_payload():
    bad = [Message("client->server", 1, 0, {"pi": 0.1, "w_hat": np.zeros(2), "alpha": np.zeros(3)})]
    assert audit_messages(bad, 2)


def test_trace_file(tmp_path):
    spec, clients = tiny_svm(1)
    admm.solve(spec, clients, trace_path=tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0].startswith("iter,objective") and len(lines) > 2

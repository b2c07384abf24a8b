import numpy as np
import pytest

from drfl import admm
from drfl.baselines import METHODS, simplex_weights, solve_afl, solve_drfa, solve_drfa_direct, solve_erm, train, zero_radius
from drfl.model import ClientDataset, LossSpec, ProblemSpec, RobustnessSpec, SolverConfig, SupportSpec, WeightSetSpec
from drfl.reference import centralized_solve
from instances import as_pairs, tiny_svm
from oracles import erm_hinge

TIGHT = SolverConfig(tol_primal=1e-7, tol_dual=1e-7, max_iters=20000)


def _svm(theta=0.1):
    return ProblemSpec(LossSpec("hinge"), SupportSpec("unbounded"), RobustnessSpec((0.0,), 0.5), WeightSetSpec(theta))


@pytest.mark.parametrize("seed", range(4))
def test_erm_matches_direct_oracle(seed):
    spec, clients = tiny_svm(seed)
    w, rec = solve_erm(spec, clients)
    _, ref = erm_hinge(as_pairs(clients), np.full(2, 0.5))
    assert rec.objective == pytest.approx(ref, abs=1e-6)


def test_erm_separable_toy():
    X = np.array([[1.0, 0.5], [0.8, 1.0], [-1.0, -0.4], [-0.6, -1.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    clients = [ClientDataset(1, X[[0, 2]], y[[0, 2]]), ClientDataset(2, X[[1, 3]], y[[1, 3]])]
    w, rec = solve_erm(_svm(), clients)
    assert rec.objective == pytest.approx(0.0, abs=1e-7)
    assert np.all(np.sign(X @ w) == y)


def test_erm_single_sample_hinge_zero_region():
    spec = ProblemSpec(LossSpec("hinge"), SupportSpec("unbounded"), RobustnessSpec((0.0,), 0.5), WeightSetSpec(0.1), n_features=1)
    w, rec = solve_erm(spec, [ClientDataset(1, [[1.0]], [1.0])])
    assert rec.objective == pytest.approx(0.0, abs=1e-8) and w[0] >= 1 - 1e-6


def test_erm_regression_exact_fit():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 2))
    y = X @ np.array([1.0, -2.0])
    spec = ProblemSpec(LossSpec("svr", epsilon=0.0), SupportSpec("unbounded"), RobustnessSpec((0.0,), 0.5), WeightSetSpec(0.1))
    w, rec = solve_erm(spec, [ClientDataset(1, X[:3], y[:3]), ClientDataset(2, X[3:], y[3:])])
    assert rec.objective == pytest.approx(0.0, abs=1e-6)


def _identical(seed):
    spec, clients = tiny_svm(seed)
    c = clients[0]
    return spec, [c, ClientDataset(2, c.X, c.y)]


def test_identical_clients_afl_and_drfa_equal_erm():
    spec, clients = _identical(1)
    _, erm = solve_erm(spec, clients)
    _, afl = solve_afl(spec, clients, TIGHT)
    _, drfa = solve_drfa(spec, clients, TIGHT)
    _, direct = solve_drfa_direct(spec, clients)
    assert afl.final_objective == pytest.approx(erm.objective, abs=1e-4)
    assert drfa.final_objective == pytest.approx(erm.objective, abs=1e-4)
    assert direct.objective == pytest.approx(erm.objective, abs=1e-6)


def test_single_client_reductions():
    spec, clients = tiny_svm(2, S=1)
    _, erm = solve_erm(spec, clients)
    _, afl = solve_afl(spec, clients, TIGHT)
    _, drfa = solve_drfa(spec, clients, TIGHT)
    assert afl.final_objective == pytest.approx(erm.objective, abs=1e-5)
    assert drfa.final_objective == pytest.approx(erm.objective, abs=1e-5)


def test_dominating_client_sets_drfa_objective():
    # client 2's labels are the opposite of a separable rule, so it cannot be fit alongside client 1
    X1 = np.array([[0.5, 0.5], [-0.5, -0.5]])
    X2 = np.array([[0.5, 0.4], [-0.4, -0.5], [0.3, 0.6]])
    clients = [ClientDataset(1, X1, [1.0, -1.0]), ClientDataset(2, X2, [-1.0, 1.0, -1.0])]
    spec = _svm()
    w, rec = solve_drfa_direct(spec, clients)
    losses = np.array(rec.client_losses)
    assert rec.objective == pytest.approx(losses.max(), abs=1e-6)
    w2, rec2 = solve_drfa(spec, clients, TIGHT)
    assert rec2.final_objective == pytest.approx(rec.objective, abs=1e-4)


def test_afl_is_drfl_with_zero_radius():
    spec, clients = tiny_svm(3)
    _, a = solve_afl(spec, clients)
    _, b = admm.solve(zero_radius(spec), clients)
    assert a.final_objective == b.final_objective
    np.testing.assert_array_equal(a.pi, b.pi)


def test_drfa_mapping_covers_simplex():
    spec, _ = tiny_svm(0)
    s = simplex_weights(spec)
    assert s.weights.theta == 2.0 and s.weights.p == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_objective_ordering_reference(seed):
    spec, clients = tiny_svm(seed)
    erm = centralized_solve(zero_radius(spec), clients, mode="weighted")[1]
    afl = centralized_solve(zero_radius(spec), clients, mode="ball")[1]
    drfa = centralized_solve(zero_radius(spec), clients, mode="worst")[1]
    drfl = centralized_solve(simplex_weights(spec), clients, mode="ball")[1]
    assert erm <= afl + 1e-6 <= drfa + 2e-6 <= drfl + 3e-6


def test_train_dispatch():
    spec, clients = tiny_svm(4)
    for m in METHODS:
        w, rec, conv = train(m, spec, clients)
        assert w.shape == (2,) and conv
    with pytest.raises(ValueError):
        train("wafl", spec, clients)

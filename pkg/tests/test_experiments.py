import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drfl.data import DataError, NoiseSchedule
from drfl.experiments import (
    Grid,
    client_folds,
    content_hash,
    cross_validate,
    evaluate,
    run_noise_sweep,
    with_params,
    write_manifest,
    write_rows,
)
from drfl.model import ClientDataset
from instances import tiny_svm


def test_evaluate_examples():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([1.0, -1.0, 1.0])
    assert evaluate(np.zeros(2), X, y) == pytest.approx(2 / 3)
    assert evaluate(np.array([1.0, -1.0]), X, y) == 1.0
    # residuals 1, -2, 0 -> (1 + 4 + 0) / 3
    assert evaluate(np.array([1.0, 1.0]), X, np.array([0.0, 3.0, 2.0]), "regression") == pytest.approx(5 / 3)
    assert evaluate(np.array([1.0, 1.0]), X, X.sum(axis=1), "regression") == 0.0
    with pytest.raises(DataError):
        evaluate(np.zeros(2), np.zeros((0, 2)), [])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_evaluate_row_order_invariant(seed):
    rng = np.random.default_rng(seed)
    X, w = rng.normal(size=(12, 3)), rng.normal(size=3)
    y = np.sign(rng.normal(size=12))
    perm = rng.permutation(12)
    assert evaluate(w, X, y) == evaluate(w, X[perm], y[perm])
    assert evaluate(w, X, y, "regression") == pytest.approx(evaluate(w, X[perm], y[perm], "regression"), rel=1e-12)


def test_default_grid_sizes():
    g = Grid()
    assert (len(g.rho), len(g.kappa), len(g.theta)) == (15, 10, 6)
    assert g.size == 900 and len(g.points("drfl")) == 900
    assert len(g.points("afl")) == 6 and len(g.points("erm")) == 1


def test_with_params():
    spec, _ = tiny_svm(0)
    s = with_params(spec, 0.3, 0.2, 0.7)
    assert s.robustness.rho == (0.3,) and s.robustness.kappa == 0.2 and s.weights.theta == 0.7


def _clients(seed=0, N=10):
    rng = np.random.default_rng(seed)
    out = []
    for s in range(2):
        X = rng.uniform(-1, 1, size=(N, 2))
        y = np.where(X[:, 0] + 0.3 * rng.normal(size=N) >= 0, 1.0, -1.0)
        y[:2] = [1.0, -1.0]
        out.append(ClientDataset(s + 1, X, y))
    return out


def test_folds_partition_each_client():
    clients = _clients()
    folds, _ = client_folds(clients, 5, 3, True)
    for c, parts in zip(clients, folds):
        assert sorted(np.concatenate(parts)) == list(range(c.size))
    with pytest.raises(DataError):
        client_folds(clients, 11, 0, True)


def test_folds_resample_single_class_training_part():
    y = np.array([1.0, 1.0, -1.0, -1.0])
    c = ClientDataset(1, np.zeros((4, 1)), y)
    total = 0
    for seed in range(10):
        folds, resamples = client_folds([c], 2, seed, True)
        total += resamples
        for f in folds[0]:
            assert np.unique(y[np.setdiff1d(np.arange(4), f)]).size == 2
    assert total > 0
    lone = ClientDataset(1, np.zeros((4, 1)), np.array([1.0, -1.0, -1.0, -1.0]))
    with pytest.raises(DataError):
        client_folds([lone], 2, 0, True)


def test_cv_single_point():
    spec, _ = tiny_svm(0)
    res = cross_validate("drfl", spec, _clients(), Grid((0.01,), (0.5,), (0.1,)), k=2, seed=0)
    assert (res.best["rho"], res.best["kappa"], res.best["theta"]) == (0.01, 0.5, 0.1)
    assert len(res.table) == 1 and len(res.table[0]["scores"]) == 2


def test_cv_prefers_the_better_point():
    # a huge radius forces w towards 0 and the sign(0) = +1 rule, which is poor on balanced labels
    spec, _ = tiny_svm(0)
    grid = Grid((1e-4, 50.0), (0.5,), (0.1,))
    res = cross_validate("drfl", spec, _clients(1), grid, k=2, seed=0)
    means = {r["rho"]: r["mean"] for r in res.table}
    assert means[1e-4] > means[50.0]
    assert res.best["rho"] == 1e-4


def test_cv_ties_pick_smallest_and_are_deterministic(tmp_path):
    spec, _ = tiny_svm(0)
    grid = Grid((0.01,), (0.5,), (0.001, 0.002))
    a = cross_validate("erm", spec, _clients(), grid, k=2, seed=5)
    b = cross_validate("erm", spec, _clients(), grid, k=2, seed=5, threads=2)
    assert a.best == b.best and a.best["theta"] == 0.001
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_noise_sweep_rows():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.5, 0.5]])
    y = np.array([1.0, -1.0, 1.0])
    models = {"erm": np.array([1.0, 0.0]), "drfl": np.array([1.0, 0.1])}
    rows = run_noise_sweep(models, X, y, NoiseSchedule("ratio", [0.0, 0.5], ratio=2.0, seed=1))
    assert len(rows) == 4
    clean = [r for r in rows if r["sd"] == 0.0]
    assert all(r["metric"] == evaluate(models[r["method"]], X, y) for r in clean)
    again = run_noise_sweep(models, X, y, NoiseSchedule("ratio", [0.0, 0.5], ratio=2.0, seed=1))
    assert rows == again


def test_persistence(tmp_path):
    write_rows([{"a": 1, "b": 0.1}], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_bytes() == b"a,b\n1,0.1\n"
    write_manifest(tmp_path / "m.json", w=np.array([1.0, np.inf]), seed=np.int64(3))
    assert json.loads((tmp_path / "m.json").read_text()) == {"seed": 3, "w": [1.0, "inf"]}
    assert content_hash(np.ones(2)) != content_hash(np.ones((2, 1)))
    assert content_hash(np.ones(2)) == content_hash([1.0, 1.0])

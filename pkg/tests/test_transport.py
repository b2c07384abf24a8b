import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drfl.transport import (
    DiscreteDist,
    EmpiricalDraw,
    TruthModel,
    containment_curve,
    default_truth,
    draw_distances,
    draw_empirical,
    mixture,
    volume_ratio,
    wasserstein_1d,
)
from oracles import transport_lp


def rand_dist(rng, k=6):
    atoms = np.sort(rng.choice(np.arange(-20, 21) / 4, size=k, replace=False))
    w = rng.uniform(0.01, 1, size=k)
    return DiscreteDist(atoms, w / w.sum())


def test_point_masses():
    assert wasserstein_1d(DiscreteDist([0.0], [1.0]), DiscreteDist([1.0], [1.0])) == 1.0
    assert wasserstein_1d(DiscreteDist([0.0, 1.0], [0.5, 0.5]), DiscreteDist([0.0], [1.0])) == pytest.approx(0.5)


def test_invalid_dists():
    with pytest.raises(ValueError):
        DiscreteDist([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteDist([0.0, 1.0], [0.7, 0.7])
    with pytest.raises(ValueError):
        TruthModel((DiscreteDist([0.0], [1.0]),), [0.5, 0.5])


@pytest.mark.parametrize("seed", range(5))
def test_matches_transport_lp(seed):
    rng = np.random.default_rng(seed)
    a, b = rand_dist(rng), rand_dist(rng)
    assert wasserstein_1d(a, b) == pytest.approx(transport_lp(a.atoms, a.weights, b.atoms, b.weights), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_properties(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rand_dist(rng, 4), rand_dist(rng, 5), rand_dist(rng, 3)
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(b, a), abs=1e-12)
    assert wasserstein_1d(a, a) <= 1e-12
    assert wasserstein_1d(a, c) <= wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-9
    assert wasserstein_1d(a, b) > 0


def test_mixture_merges_atoms():
    m = mixture([DiscreteDist([0.0, 1.0], [0.5, 0.5]), DiscreteDist([1.0, 2.0], [0.5, 0.5])], [0.5, 0.5])
    np.testing.assert_allclose(m.atoms, [0, 1, 2])
    np.testing.assert_allclose(m.weights, [0.25, 0.5, 0.25])


def test_draw_distances_exact_empirical_is_zero():
    truth = default_truth()
    draw = EmpiricalDraw(truth.q.copy(), [d.weights.copy() for d in truth.clients])
    assert draw_distances(truth, draw) == (0.0, 0.0)


def test_draw_empirical_reports_empty_client():
    truth = TruthModel((DiscreteDist([0.0], [1.0]), DiscreteDist([1.0], [1.0])), [0.999999, 1e-6])
    assert draw_empirical(truth, 3, np.random.default_rng(0)) is None


def test_containment_endpoints_and_monotone():
    rho = np.array([0.0, 1e-4, 1e-2, 0.1, 0.3, 3.0, 10.0])
    res = containment_curve(default_truth(), 200, 30, rho, seed=1)
    assert res.p_drfl[0] == 0 and res.p_wafl[0] == 0
    assert res.p_drfl[-1] == 1 and res.p_wafl[-1] == 1
    assert np.all(np.diff(res.p_drfl) >= 0) and np.all(np.diff(res.p_wafl) >= 0)


def test_containment_is_seeded():
    a = containment_curve(default_truth(), 100, 10, seed=3)
    b = containment_curve(default_truth(), 100, 10, seed=3)
    np.testing.assert_array_equal(a.p_drfl, b.p_drfl)
    np.testing.assert_array_equal(a.d_wafl, b.d_wafl)


def test_volume_endpoints():
    truth = default_truth()
    curve = containment_curve(truth, 200, 20, np.array([0.0, 5.0]), seed=0)
    vol = volume_ratio(truth, [1.0], 500, 0, curve, 200)
    assert vol.vol_drfl[0] == 1.0 and vol.vol_wafl[0] == 1.0
    zero = containment_curve(truth, 200, 20, np.array([0.0]), seed=0)
    zero.p_drfl[:] = 1.0
    zero.p_wafl[:] = 1.0
    vol0 = volume_ratio(truth, [0.5], 500, 0, zero, 200)
    assert vol0.vol_drfl[0] == 0.0 and vol0.vol_wafl[0] == 0.0


def test_volume_unreached_level_is_nan():
    truth = default_truth()
    curve = containment_curve(truth, 200, 20, np.array([1e-5]), seed=0)
    vol = volume_ratio(truth, [0.9], 100, 0, curve, 200)
    assert np.isnan(vol.rho_drfl[0]) and np.isnan(vol.vol_drfl[0])


def test_truth_round_trip():
    t = default_truth()
    u = TruthModel.from_dict(t.to_dict())
    np.testing.assert_array_equal(u.q, t.q)
    assert all(np.array_equal(a.atoms, b.atoms) for a, b in zip(t.clients, u.clients))

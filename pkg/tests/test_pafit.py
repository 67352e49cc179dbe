import numpy as np
import pytest

from hypolib import GridDomain, GridFn, MaxAffine, PaDiff, fit_difference_of_max, pa_fit, pa_to_gridfn
from hypolib.pafit import DifferenceOfMaxRegressor, affine_regions


def model(res, X):
    return res.plus(X) - res.minus(X)


def random_padiff(rng, q, n):
    return (
        MaxAffine(rng.normal(size=(q, n)), rng.normal(size=q)),
        MaxAffine(rng.normal(size=(q, n)), rng.normal(size=q)),
    )


def assert_monotone(history):
    obj = [h["objective"] for h in history]
    assert all(b < a for a, b in zip(obj, obj[1:]))


def test_affine_target_q1():
    X = np.linspace(-2, 2, 41)[:, None]
    y = 3 * X[:, 0] - 1
    res = fit_difference_of_max(X, y, q=1)
    assert np.max(np.abs(model(res, X) - y)) < 1e-8
    assert_monotone(res.history)


def test_abs_target_q2():
    X = np.linspace(-2, 2, 81)[:, None]
    y = np.abs(X[:, 0])
    res = fit_difference_of_max(X, y, q=2, restarts=10)
    assert np.max(np.abs(model(res, X) - y)) < 1e-6
    assert_monotone(res.history)


def test_objective_is_mean_squared_residual():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (60, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    res = fit_difference_of_max(X, y, q=3, restarts=3, iterations=50)
    assert res.objective == pytest.approx(np.mean((model(res, X) - y) ** 2), rel=1e-10)
    assert_monotone(res.history)
    assert res.history[-1]["objective"] == pytest.approx(res.objective)


@pytest.mark.parametrize("seed", range(5))
def test_random_padiff_recovery_2d(seed):
    rng = np.random.default_rng(100 + seed)
    plus, minus = random_padiff(rng, 3, 2)
    d = GridDomain.regular(-1, 1, 0.1, n=2)
    X = d.points
    y = plus(X) - minus(X)
    res = fit_difference_of_max(X, y, q=3, restarts=20, seed=seed)
    assert np.max(np.abs(model(res, X) - y)) < 1e-4
    assert_monotone(res.history)


def test_pa_fit_restricts_to_ball():
    d = GridDomain.regular(-2, 2, 0.1)
    f = GridFn.from_callable(d, lambda P: np.abs(P[:, 0]))
    phi = pa_fit(f, q=2, rho=1.0, restarts=3)
    assert isinstance(phi, PaDiff)
    g = pa_to_gridfn(phi, d)
    inside = np.abs(d.points[:, 0]) <= 1.0
    assert np.all(np.isneginf(g.values[~inside]))
    assert np.allclose(g.values[inside], f.values[inside], atol=1e-6)


def test_pa_fit_is_deterministic():
    d = GridDomain.regular(-2, 2, 0.1)
    f = GridFn.from_callable(d, lambda P: np.cos(2 * P[:, 0]))
    a = pa_fit(f, q=3, rho=2.0, restarts=2, seed=7)
    b = pa_fit(f, q=3, rho=2.0, restarts=2, seed=7)
    assert a.to_dict() == b.to_dict()


def test_affine_regions_separate_pieces():
    X = np.linspace(-2, 2, 41)[:, None]
    y = np.abs(X[:, 0])
    lab = affine_regions(X, y)
    assert len(set(lab[X[:, 0] < -0.2])) == 1
    assert len(set(lab[X[:, 0] > 0.2])) == 1
    assert lab[0] != lab[-1]


def test_regressor_estimator_api():
    X = np.linspace(-1, 1, 21)[:, None]
    y = np.maximum(X[:, 0], 0)
    est = DifferenceOfMaxRegressor(n_pieces=2, n_restarts=3).fit(X, y)
    assert est.predict(X) == pytest.approx(y, abs=1e-8)
    assert est.get_params()["n_pieces"] == 2
    assert est.score(X, y) == pytest.approx(1.0)
    phi = est.to_padiff(radius=1.0)
    assert phi.radius == 1.0

import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from hypolib import (
    LS_DENSITY,
    LS_REGRESSION,
    MLE_DENSITY,
    FunctionClass,
    GridDomain,
    GridFn,
    Objective,
    RateSpec,
    SAAEstimator,
    Sample,
    Truth,
    argmin_excess_check,
    check_equi_usc,
    check_holder_pointwise,
    confidence_radius,
    consistency_experiment,
    coverage_experiment,
    level_set_member,
    population_objective,
    project_class,
    rate_experiment,
    rate_r_nu,
    saa_solve,
    sample_average,
)
from hypolib.estimation import InfeasibleClassError, snap_to_nodes

from helpers import brute_prop, random_lipschitz_fn

D11 = GridDomain.regular(-5, 5, 1)


# ------------------------------------------------------------ objectives


def test_objective_aliases():
    assert Objective("mle").kind == MLE_DENSITY
    assert Objective("ls").kind == LS_REGRESSION
    assert Objective("lsd").kind == LS_DENSITY
    assert Objective("lsd").is_density
    with pytest.raises(ValueError):
        Objective("nope")


def test_mle_uniform_density():
    u = GridFn.constant(D11, 1 / 11)
    s = Sample(D11, [0, 3, 3, 7, 10])
    assert sample_average(MLE_DENSITY, s, u) == pytest.approx(math.log(11))


def test_sample_average_matches_loop():
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 11, 40)
    y = rng.normal(size=40)
    f = GridFn(D11, rng.uniform(0.01, 0.2, 11))
    s = Sample(D11, idx, y)
    vals = f.values
    assert sample_average(LS_REGRESSION, s, f) == pytest.approx(np.mean((y - vals[idx]) ** 2))
    assert sample_average(MLE_DENSITY, s, f) == pytest.approx(np.mean(-np.log(vals[idx])))
    ls = np.mean(-2 * vals[idx]) + np.sum(vals**2) * D11.cell_volume
    assert sample_average(LS_DENSITY, s, f) == pytest.approx(ls)


def test_mle_zero_at_data_is_infinite():
    f = GridFn(D11, np.r_[0.0, np.full(10, 0.1)])
    assert sample_average(MLE_DENSITY, Sample(D11, [0, 1]), f) == math.inf


def test_ls_density_at_truth_is_minus_squared_norm():
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(11))
    f0 = GridFn(D11, p)  # unit cell volume
    truth = Truth.density(f0)
    assert population_objective(LS_DENSITY, truth, f0) == pytest.approx(-np.sum(p**2))


def test_mle_truth_beats_other_densities():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(11))
    truth = Truth.density(GridFn(D11, p))
    v0 = population_objective(MLE_DENSITY, truth, GridFn(D11, p))
    for _ in range(200):
        q = rng.dirichlet(np.ones(11))
        assert population_objective(MLE_DENSITY, truth, GridFn(D11, q)) >= v0 - 1e-12


def test_snap_ties_go_low():
    assert snap_to_nodes(D11, [[0.5], [-0.5], [0.49], [7.0]]).tolist() == [5, 4, 5, 10]


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(D11, [])
    with pytest.raises(ValueError):
        Sample(D11, [11])
    with pytest.raises(ValueError):
        Sample(D11, [0, 1], y=[1.0])


# ------------------------------------------------------------ projection


def test_projection_of_zero_is_uniform():
    C = FunctionClass(D11, 0.0, 1.0, unit_integral=True)
    assert np.allclose(project_class(np.zeros(11), C).values, 1 / 11)


def bisect_projection(v, lo, hi, target):
    span = np.abs(v).max() + 100
    a, b = -span, span
    for _ in range(200):
        t = 0.5 * (a + b)
        if np.clip(v - t, lo, hi).sum() > target:
            a = t
        else:
            b = t
    return np.clip(v - 0.5 * (a + b), lo, hi)


def test_box_integral_projection_against_bisection():
    rng = np.random.default_rng(3)
    d = GridDomain.regular(-2, 2, 0.5)
    for _ in range(30):
        v = rng.normal(0, 1, d.size)
        lo = np.where(rng.random(d.size) < 0.5, 0.0, -np.inf)
        hi = np.where(rng.random(d.size) < 0.5, 1.5, np.inf)
        C = FunctionClass(d, lo, hi, unit_integral=True)
        got = project_class(v, C).values
        assert got.sum() * 0.5 == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(got, bisect_projection(v, lo, hi, 2.0), atol=1e-9)


def test_lipschitz_projection_against_slsqp():
    rng = np.random.default_rng(4)
    d = GridDomain.regular(-1, 1, 0.5)
    P = d.points[:, 0]
    kappa = 0.8
    pairs = list(itertools.combinations(range(d.size), 2))
    for _ in range(5):
        v = rng.normal(0, 1, d.size)
        C = FunctionClass(d, 0.0, np.inf, kappa=kappa, unit_integral=True)
        got = project_class(v, C, tol=1e-10).values
        cons = [{"type": "eq", "fun": lambda x: 0.5 * x.sum() - 1}]
        for i, j in pairs:
            L = kappa * abs(P[i] - P[j])
            cons.append({"type": "ineq", "fun": lambda x, i=i, j=j, L=L: L - (x[i] - x[j])})
            cons.append({"type": "ineq", "fun": lambda x, i=i, j=j, L=L: L + (x[i] - x[j])})
        ref = minimize(
            lambda x: np.sum((x - v) ** 2), np.full(d.size, 0.4), constraints=cons,
            bounds=[(0, None)] * d.size, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500},
        ).x
        assert np.allclose(got, ref, atol=1e-5)


def test_lipschitz_projection_masked_and_2d():
    rng = np.random.default_rng(5)
    mask = np.ones((5, 5), dtype=bool)
    mask[0, 0] = mask[4, 2] = False
    for d in (GridDomain.regular(-1, 1, 0.5, n=2), GridDomain([-1, -1], [1, 1], [0.5, 0.5], mask)):
        C = FunctionClass(d, kappa=1.0)
        x = project_class(rng.normal(0, 2, d.size), C, tol=1e-9).values
        D = d.pairwise_sup()
        assert np.max(np.abs(x[:, None] - x[None, :]) - D) <= 1e-8


def test_constants_class_projection():
    C = FunctionClass(D11, -1.0, 0.5, kappa=0)
    assert np.allclose(project_class(np.arange(11.0), C).values, 0.5)
    assert np.allclose(project_class(np.linspace(-1, 1, 11), C).values, 0.0)


def test_infeasible_classes():
    with pytest.raises(InfeasibleClassError):
        FunctionClass(D11, 1.0, 0.0)
    with pytest.raises(InfeasibleClassError):
        FunctionClass(D11, 0.0, 0.01, unit_integral=True)


# ---------------------------------------------------------------- solver


def regression_sample(rng, nu):
    x = rng.integers(0, 11, nu)
    y = 1.0 + rng.choice([-1.0, 0.0, 1.0], nu, p=[0.25, 0.5, 0.25])
    return Sample(D11, x, y)


@pytest.mark.parametrize("step", [(1.0, 0.1), "auto"])
def test_constants_regression_is_sample_mean(step):
    s = regression_sample(np.random.default_rng(6), 300)
    f = saa_solve(LS_REGRESSION, s, FunctionClass(D11, kappa=0), step=step)
    assert np.allclose(f.values, s.y.mean(), atol=1e-6)


@pytest.mark.parametrize("step", [(1.0, 0.1), "auto"])
def test_histogram_mle_is_empirical_frequency(step):
    rng = np.random.default_rng(7)
    d = GridDomain.regular(-2, 2, 0.5)
    idx = rng.integers(0, d.size, 400)
    C = FunctionClass(d, 0.0, 100.0, unit_integral=True)
    f = saa_solve(MLE_DENSITY, Sample(d, idx), C, step=step)
    freq = np.bincount(idx, minlength=d.size) / idx.size / d.cell_volume
    assert np.allclose(f.values, freq, atol=1e-4)


def test_lipschitz_regression_feasible_and_better_than_start():
    rng = np.random.default_rng(8)
    d = GridDomain.regular(-2, 2, 0.25)
    X = rng.uniform(-2, 2, 200)
    y = np.sin(X) + 0.1 * rng.normal(size=200)
    s = Sample.from_points(d, X[:, None], y)
    C = FunctionClass(d, kappa=1.0)
    res = saa_solve(LS_REGRESSION, s, C, return_result=True)
    assert C.lipschitz_violation(res.f.values) <= 1e-6
    assert all(b < a for a, b in zip(res.history, res.history[1:]))
    assert res.objective < sample_average(LS_REGRESSION, s, GridFn.constant(d, y.mean()))


def test_solver_deterministic():
    s = regression_sample(np.random.default_rng(9), 50)
    C = FunctionClass(D11, kappa=0.5)
    a = saa_solve(LS_REGRESSION, s, C, seed=3)
    b = saa_solve(LS_REGRESSION, s, C, seed=3)
    assert np.array_equal(a.values, b.values)


def test_estimator_api():
    rng = np.random.default_rng(10)
    X = rng.integers(-5, 6, 300)[:, None].astype(float)
    est = SAAEstimator(domain=D11, objective="mle", upper=10.0).fit(X)
    freq = np.bincount((X[:, 0] + 5).astype(int), minlength=11) / 300
    assert np.allclose(est.estimate_.values, freq, atol=1e-4)
    assert est.predict([[0.2]])[0] == pytest.approx(freq[5], abs=1e-4)
    assert est.score(X) == pytest.approx(-sample_average(MLE_DENSITY, Sample.from_points(D11, X), est.estimate_))
    assert est.get_params()["objective"] == "mle"


# ------------------------------------------------------------ confidence


def test_confidence_radius_values():
    assert confidence_radius(math.e**2, 1, 1) == pytest.approx(4 / math.e**2)
    assert 4 / math.e**2 == pytest.approx(0.5413, abs=1e-4)
    radii = [confidence_radius(1000, n, 1) for n in (1, 2, 4, 8, 64)]
    assert all(b > a for a, b in zip(radii, radii[1:]))
    assert radii[-1] < math.log(1000)


def test_rate_r_nu_values():
    assert rate_r_nu(math.e, RateSpec(1, 1)) == pytest.approx(math.exp(-1 / 3))
    assert math.exp(-1 / 3) == pytest.approx(0.7165, abs=1e-4)
    spec = RateSpec(1, 2)
    strip = lambda nu: rate_r_nu(nu, spec) / math.log(nu) ** (2 / 2.5)
    assert math.log(strip(1e6) / strip(1e3)) / math.log(1e3) == pytest.approx(-2 / 5)


def test_level_set_member():
    s = regression_sample(np.random.default_rng(11), 100)
    f = GridFn.constant(D11, 1.0)
    v = sample_average(LS_REGRESSION, s, f)
    assert level_set_member(LS_REGRESSION, s, f, v)
    assert not level_set_member(LS_REGRESSION, s, f, v - 1e-9)
    assert level_set_member(LS_REGRESSION, s, f, math.inf)


def constants_truth():
    return Truth.regression(GridFn.constant(D11, 1.0), noise=(-1.0, 0.0, 1.0), noise_probs=(0.25, 0.5, 0.25))


def test_rate_experiment_small():
    res = rate_experiment(LS_REGRESSION, constants_truth(), FunctionClass(D11, kappa=0), [100, 1000], replications=10)
    assert res["population_value"] == pytest.approx(0.5, abs=1e-9)
    assert res["per_nu"][1]["median_gap"] < res["per_nu"][0]["median_gap"]
    again = rate_experiment(LS_REGRESSION, constants_truth(), FunctionClass(D11, kappa=0), [100, 1000], replications=10)
    assert again["per_nu"] == res["per_nu"]


def test_consistency_experiment_small():
    res = consistency_experiment(
        LS_REGRESSION, constants_truth(), FunctionClass(D11, kappa=0), [20, 200, 2000], replications=5
    )
    assert res["fraction_decreasing"] >= 0.8
    assert res["median_dl"][-1] < res["median_dl"][0]


def test_coverage_experiment_small():
    res = coverage_experiment(LS_REGRESSION, constants_truth(), GridFn.constant(D11, 1.0), 0.6, 500, replications=40)
    assert res["frequency"] >= 0.9


# --------------------------------------------------------- pointwise bound


def test_holder_constant_shift():
    rep = check_holder_pointwise(GridFn.constant(D11, 0), GridFn.constant(D11, -1), 0)
    assert rep["dl"] == pytest.approx(1.0, abs=1e-4)
    assert rep["holds"]


def test_holder_random_lipschitz_pairs():
    rng = np.random.default_rng(12)
    d = GridDomain.regular(-2, 2, 0.25)
    for _ in range(10):
        f, g = random_lipschitz_fn(rng, d, 2.0), random_lipschitz_fn(rng, d, 2.0)
        assert check_holder_pointwise(f, g, 2.0)["holds"]


def test_holder_rejects_non_lipschitz():
    d = GridDomain.regular(-1, 1, 0.5)
    f = GridFn(d, [0, 0, 5, 0, 0])
    with pytest.raises(ValueError):
        check_holder_pointwise(f, GridFn.constant(d, 0), 1.0)


def test_equi_usc_for_lipschitz_family():
    rng = np.random.default_rng(13)
    d = GridDomain.regular(-2, 2, 0.1)
    F = [random_lipschitz_fn(rng, d, 1.5) for _ in range(5)]
    assert check_equi_usc(F, 1.5)["holds"]
    spike = GridFn(d, np.where(np.abs(d.points[:, 0]) < 0.05, 3.0, 0.0))
    assert not check_equi_usc([spike], 1.5)["holds"]


# ----------------------------------------------------- level/argmin excess


def test_argmin_excess_random_instances():
    rng = np.random.default_rng(14)
    found = 0
    while found < 60:
        m1, m2 = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        pts1, pts2 = rng.uniform(0, 3, m1), rng.uniform(0, 3, m2)
        D = np.abs(pts1[:, None] - pts2[None, :])
        phi1, phi2 = rng.uniform(0, 2, m1), rng.uniform(0, 2, m2)
        tau, gamma = float(rng.uniform(0, 1)), float(rng.uniform(0.2, 2))
        eps, delta = float(rng.uniform(0, 0.5)), float(rng.uniform(0, 2))
        rep = argmin_excess_check(None, None, phi1, phi2, tau, gamma, eps, delta, D=D)
        pa, pb, lev, arg = brute_prop(D, phi1, phi2, tau, gamma, eps, delta)
        assert rep["premise_level"] == pa
        assert rep["premise_argmin"] == pb
        if pa:
            assert rep["level_holds"] and lev
        if pb:
            found += 1
            assert rep["argmin_holds"] and arg


def test_argmin_excess_infinite_convention():
    D = np.array([[0.5, 2.0], [1.0, 0.2]])
    rep = argmin_excess_check(None, None, [math.inf, math.inf], [math.inf, math.inf], 0.1, 1.0, 0.1, 0.0, D=D)
    assert rep["premise_argmin"]
    assert rep["argmin_holds"]
    # every member of F1 is an argmin, so the excess is the worst row minimum
    assert rep["exs_argmin"] == pytest.approx(0.5)


def test_argmin_excess_with_functions():
    d = GridDomain.regular(-1, 1, 0.5)
    F = [GridFn.constant(d, c) for c in (0.0, 0.1, 0.5)]
    rep = argmin_excess_check(F, F, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.0, 0.0, 0.1, 2.0)
    assert rep["premise_argmin"] and rep["argmin_holds"] and rep["level_holds"]
    assert rep["exs_argmin"] == 0.0

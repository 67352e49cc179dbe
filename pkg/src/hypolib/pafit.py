"""Least-squares fitting of difference-of-max functions.

Each round assigns every data point to its active plus-piece and minus-piece,
solves the linear least-squares problem for all affine coefficients under
that assignment, and keeps the new coefficients only if the true objective
(with the max re-evaluated) goes down. Stalls are escaped by perturbing the
assignment near large residuals, and restarts alternate between Voronoi
seeds and seeds built from detected affine regions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.cluster import DBSCAN
from sklearn.neighbors import NearestNeighbors
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import GridFn, MaxAffine, PaDiff


@dataclass
class FitResult:
    plus: MaxAffine
    minus: MaxAffine
    objective: float  # mean squared residual
    history: list = field(default_factory=list)
    restart: int = 0
    iterations: int = 0


def _design(X, kp, km, q):
    m, n = X.shape
    Xa = np.hstack([X, np.ones((m, 1))])
    p = n + 1
    Phi = np.zeros((m, 2 * q * p))
    rows = np.arange(m)
    for j in range(p):
        Phi[rows, kp * p + j] = Xa[:, j]
        Phi[rows, q * p + km * p + j] = -Xa[:, j]
    return Phi


def _unpack(theta, q, n):
    p = n + 1
    P = theta[: q * p].reshape(q, p)
    M = theta[q * p :].reshape(q, p)
    return P[:, :n], P[:, n], M[:, :n], M[:, n]


def _fill_empty(A, b, assigned):
    """Copy an assigned piece into unassigned slots so they never win the max alone."""
    if assigned.all():
        return A, b
    src = int(np.flatnonzero(assigned)[0])
    A, b = A.copy(), b.copy()
    A[~assigned] = A[src]
    b[~assigned] = b[src]
    return A, b


def _model(X, A, a0, B, b0):
    P = X @ A.T + a0
    M = X @ B.T + b0
    return P.max(axis=1) - M.max(axis=1), P.argmax(axis=1), M.argmax(axis=1)


def _voronoi(X, k, rng):
    idx = rng.choice(X.shape[0], size=min(k, X.shape[0]), replace=False)
    C = X[idx]
    d = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def affine_regions(X, y, rtol: float = 1e-9) -> np.ndarray:
    """Label points by the affine piece that fits their neighbourhood exactly.

    Each point gets a local linear fit over its 3^n nearest neighbours; points
    whose fit is exact are clustered by coefficients, the rest inherit the
    label of the nearest clustered point. With noisy data the best quarter of
    local fits is clustered on a coarser scale instead.
    """
    m, n = X.shape
    k = min(m, 3**n, 4 * (n + 1) + 1)
    nb = NearestNeighbors(n_neighbors=k).fit(X).kneighbors(X, return_distance=False)
    Xa = np.hstack([X, np.ones((m, 1))])
    coef = np.empty((m, n + 1))
    res = np.empty(m)
    for i in range(m):
        c = np.linalg.lstsq(Xa[nb[i]], y[nb[i]], rcond=None)[0]
        coef[i] = c
        res[i] = np.sqrt(np.mean((Xa[nb[i]] @ c - y[nb[i]]) ** 2))
    scale = max(float(np.std(y)), 1e-12)
    clean = res <= rtol * scale
    if clean.sum() >= 2 * (n + 1):
        C, eps = coef[clean] / scale, 1e-6
    else:
        clean = res <= np.quantile(res, 0.25)
        C, eps = coef[clean] / (coef[clean].std(axis=0) + 1e-12), 0.05
    labels = np.full(m, -1)
    labels[clean] = DBSCAN(eps=eps, min_samples=2).fit_predict(C)
    good = labels >= 0
    if not good.any():
        return np.zeros(m, dtype=int)
    if not good.all():
        near = NearestNeighbors(n_neighbors=1).fit(X[good]).kneighbors(X[~good], return_distance=False)[:, 0]
        labels[~good] = labels[good][near]
    return labels


def _kick(X, resid, kp, km, q, rng):
    """Perturb the assignment of one side around large residuals."""
    m, n = X.shape
    kp, km = kp.copy(), km.copy()
    side = kp if rng.random() < 0.5 else km
    worst = np.argsort(-np.abs(resid), kind="stable")
    if rng.random() < 0.5:
        # move a box-shaped patch near a bad point onto a single piece
        w = int(rng.choice(worst[: max(1, m // 20)]))
        size = int(np.exp(rng.uniform(np.log(n + 1), np.log(max(n + 2, m // q)))))
        d = np.abs(X - X[w]).max(axis=1)
        side[np.argsort(d, kind="stable")[:size]] = rng.integers(q)
    else:
        idx = worst[: max(1, m // 10)]
        side[idx] = rng.integers(0, q, idx.size)
    return kp, km


def _fit_once(X, y, q, kp, km, rng, iterations):
    """Alternate assignment and least squares from (kp, km).

    A candidate is accepted only if it lowers the true objective; at a
    fixpoint or a rejected step the accepted assignment is kicked instead.
    The recorded history therefore never increases.
    """
    m, n = X.shape
    cur = None
    history = []
    for it in range(iterations):
        Phi = _design(X, kp, km, q)
        theta = np.linalg.lstsq(Phi, y, rcond=None)[0]
        A, a0, B, b0 = _unpack(theta, q, n)
        A, a0 = _fill_empty(A, a0, np.isin(np.arange(q), kp))
        B, b0 = _fill_empty(B, b0, np.isin(np.arange(q), km))
        pred, kp_new, km_new = _model(X, A, a0, B, b0)
        obj = float(np.mean((pred - y) ** 2))
        if cur is None or obj < cur["objective"]:
            cur = dict(objective=obj, pieces=(A, a0, B, b0), kp=kp_new, km=km_new, resid=pred - y)
            history.append({"iteration": it, "objective": obj})
            if obj <= 1e-28 * max(1.0, float(np.mean(y**2))):
                break
            if not (np.array_equal(kp_new, kp) and np.array_equal(km_new, km)):
                kp, km = kp_new, km_new
                continue
        kp, km = _kick(X, cur["resid"], cur["kp"], cur["km"], q, rng)
    A, a0, B, b0 = cur["pieces"]
    return cur["objective"], MaxAffine(A, a0), MaxAffine(B, b0), history


def fit_difference_of_max(X, y, q: int, restarts: int = 10, iterations: int = 100, seed: int = 0) -> FitResult:
    """Best-of-``restarts`` alternating fit; deterministic for a given seed."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if q < 1:
        raise ValueError("q must be >= 1")
    if X.shape[0] < 2 * (X.shape[1] + 1):
        raise ValueError(f"need at least {2 * (X.shape[1] + 1)} finite data points, got {X.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    exact = 1e-28 * max(1.0, float(np.mean(y**2)))
    labels = affine_regions(X, y)
    n_regions = int(labels.max()) + 1
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        if r % 2 == 0:
            kp = _voronoi(X, q, rng)
            km = _voronoi(X, int(rng.integers(1, q + 1)), rng)
        else:
            # random (plus, minus) piece pair per detected affine region
            kp = rng.integers(0, q, n_regions)[labels]
            km = rng.integers(0, q, n_regions)[labels]
        obj, plus, minus, hist = _fit_once(X, y, q, kp, km, rng, iterations)
        if best is None or obj < best.objective:
            best = FitResult(plus, minus, obj, hist, restart=r, iterations=len(hist))
        if best.objective <= exact:
            break
    return best


def pa_fit(target: GridFn, q: int, rho: float, restarts: int = 10, iterations: int = 100, seed: int = 0) -> PaDiff:
    """Fit a difference-of-max function to ``target`` on its nodes within the rho-ball."""
    dom = target.domain
    sel = (dom.norms() <= rho * (1 + 1e-12) + 1e-15) & target.finite
    res = fit_difference_of_max(dom.points[sel], target.values[sel], q, restarts, iterations, seed)
    out = PaDiff(res.plus, res.minus, rho, dom)
    object.__setattr__(out, "fit_result", res)
    return out


class DifferenceOfMaxRegressor(RegressorMixin, BaseEstimator):
    """Regressor of the form max_k <a_k,x>+alpha_k - max_k <b_k,x>+beta_k.

    Parameters
    ----------
    n_pieces : int
        Piece budget q for each of the two max-affine parts.
    n_restarts : int
        Random restarts; the lowest training error wins.
    max_iter : int
        Cap on alternating assign/solve rounds per restart.
    random_state : int
    """

    def __init__(self, n_pieces: int = 2, n_restarts: int = 10, max_iter: int = 100, random_state: int = 0):
        self.n_pieces = n_pieces
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        res = fit_difference_of_max(X, y, self.n_pieces, self.n_restarts, self.max_iter, self.random_state)
        self.plus_ = res.plus
        self.minus_ = res.minus
        self.training_error_ = res.objective
        self.history_ = res.history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "plus_")
        X = check_array(X)
        return self.plus_(X) - self.minus_(X)

    def to_padiff(self, radius: float, domain=None) -> PaDiff:
        check_is_fitted(self, "plus_")
        return PaDiff(self.plus_, self.minus_, radius, domain)

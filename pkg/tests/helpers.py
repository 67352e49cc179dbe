"""Random generators and brute-force oracles shared by the test modules.

The oracles are deliberately naive: they evaluate definitions directly on
dense grids instead of reusing any structure from the library.
"""
import math

import numpy as np

from hypolib import GridDomain, GridFn


def random_domain(rng, n=None, max_per_axis=21):
    n = int(rng.integers(1, 3)) if n is None else n
    h = float(rng.choice([0.25, 0.5, 1.0]))
    lo = [-h * int(rng.integers(0, (max_per_axis - 1) // 2 + 1)) for _ in range(n)]
    hi = [h * int(rng.integers(0, (max_per_axis - 1) // 2 + 1)) for _ in range(n)]
    return GridDomain(lo, hi, [h] * n)


def random_fn(rng, dom, scale=None, p_neginf=0.2, nonneg=False):
    scale = float(rng.choice([0.5, 2.0, 5.0])) if scale is None else scale
    v = rng.normal(0.0, scale, dom.size)
    if nonneg:
        v = np.abs(v)
    v[rng.random(dom.size) < p_neginf] = -np.inf
    if not np.isfinite(v).any():
        v[rng.integers(dom.size)] = 0.0
    return GridFn(dom, v)


def random_lipschitz_fn(rng, dom, kappa):
    """Max of a few random cones of slope <= kappa (sup-norm Lipschitz)."""
    P = dom.points
    k = int(rng.integers(1, 4))
    centers = P[rng.integers(0, dom.size, k)]
    heights = rng.normal(0.0, 1.0, k)
    slopes = rng.uniform(0.0, kappa, k)
    d = np.max(np.abs(P[:, None, :] - centers[None, :, :]), axis=2)
    return GridFn(dom, np.max(heights - slopes * d, axis=1))


def brute_dist(x, alpha, f):
    """Sup-norm distance from (x, alpha) to the hypograph of f."""
    best = math.inf
    for y, v in zip(f.domain.points, f.values):
        if v == -math.inf:
            continue
        d = max(float(np.max(np.abs(np.asarray(x) - y))), max(0.0, alpha - v))
        best = min(best, d)
    return best


def brute_dl_rho(f, g, rho, h):
    """Max of |dist(z, hypo f) - dist(z, hypo g)| over nodes in the rho-ball and
    an alpha-grid of spacing h on [-rho, rho].

    The discrepancy is 2-Lipschitz in alpha, so the true value lies in
    [result, result + h].
    """
    P = f.domain.points
    inball = np.max(np.abs(P), axis=1) <= rho + 1e-12
    if not inball.any():
        return 0.0
    alphas = np.linspace(-rho, rho, max(2, int(math.ceil(2 * rho / h)) + 1))
    D = np.max(np.abs(P[inball][:, None, :] - P[None, :, :]), axis=2)
    best = 0.0
    for a in alphas:
        df = np.min(np.maximum(D, np.maximum(0.0, a - f.values[None, :])), axis=1)
        dg = np.min(np.maximum(D, np.maximum(0.0, a - g.values[None, :])), axis=1)
        best = max(best, float(np.max(np.abs(df - dg))))
    return best


def riemann_dl_bounds(f, g, dl_rho, R=30.0, dr=0.01):
    """Lower and upper Riemann sums of int_0^inf dl_rho e^-rho drho.

    Relies on rho -> dl_rho being nondecreasing, and on it growing at most
    linearly once rho exceeds every node radius.
    """
    grid = np.arange(0.0, R + dr / 2, dr)
    vals = np.array([dl_rho(f, g, r) for r in grid])
    w = np.exp(-grid[:-1]) - np.exp(-grid[1:])
    lower = float(np.sum(vals[:-1] * w))
    upper = float(np.sum(vals[1:] * w)) + math.exp(-R) * (vals[-1] + 1.0)
    return lower, upper


def brute_dhat(f, g, rho):
    """Smallest tau among candidate values satisfying the two-sided
    enlargement condition, by direct scan."""
    P = f.domain.points
    nrm = np.max(np.abs(P), axis=1)

    def one_side(a, b):
        worst = 0.0
        for i in range(len(P)):
            if nrm[i] > rho + 1e-12 or a.values[i] < -rho:
                continue
            target = min(a.values[i], rho)
            need = math.inf
            for j in range(len(P)):
                if b.values[j] == -math.inf:
                    continue
                d = float(np.max(np.abs(P[i] - P[j])))
                need = min(need, max(d, target - b.values[j]))
            worst = max(worst, need)
        return worst

    return max(one_side(f, g), one_side(g, f))


def brute_prop(D, phi1, phi2, tau, gamma, eps, delta):
    """Premises and conclusions evaluated by explicit loops over members."""
    m1, m2 = len(phi1), len(phi2)

    prem_a = True
    for j in range(m2):
        near = [i for i in range(m1) if D[i][j] <= gamma]
        if not near or min(phi1[i] for i in near) > phi2[j] + tau:
            prem_a = False
    prem_b = True
    for i in range(m1):
        near = [j for j in range(m2) if D[i][j] <= gamma]
        if not near or min(phi2[j] for j in near) > phi1[i] + tau:
            prem_b = False

    def argmin(phi, e):
        m = min(phi)
        if m == math.inf:
            return list(range(len(phi)))
        return [k for k in range(len(phi)) if phi[k] <= m + e]

    lev2 = [j for j in range(m2) if phi2[j] <= delta]
    lev1 = [i for i in range(m1) if phi1[i] <= delta + tau]
    level_ok = all(any(D[i][j] <= gamma for i in lev1) for j in lev2)
    a1, a2 = argmin(phi1, eps), argmin(phi2, eps + 2 * tau)
    arg_ok = all(any(D[i][j] <= gamma for j in a2) for i in a1)
    return prem_a, prem_a and prem_b, level_ok, arg_ok

"""Sample average approximation over classes of grid functions.

Three objectives are supported: maximum likelihood for densities, least
squares for regression, and least squares for densities. Integrals are
Riemann sums with the grid cell volume. Samples are summarized by per-node
weights, so a population (a finitely supported distribution) is just a
weighted sample and shares all of the code.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .core import DomainError, GridDomain, GridFn, check_same_domain
from .metric import dl

__all__ = [
    "MLE_DENSITY",
    "LS_REGRESSION",
    "LS_DENSITY",
    "Objective",
    "FunctionClass",
    "InfeasibleClassError",
    "Sample",
    "Truth",
    "RateSpec",
    "sample_average",
    "population_objective",
    "project_class",
    "saa_solve",
    "population_minimizer",
    "level_set_member",
    "confidence_radius",
    "rate_r_nu",
    "rate_experiment",
    "consistency_experiment",
    "coverage_experiment",
    "check_holder_pointwise",
    "check_equi_usc",
    "argmin_excess_check",
    "SAAEstimator",
]

MLE_DENSITY = "mle_density"
LS_REGRESSION = "ls_regression"
LS_DENSITY = "ls_density"
_KINDS = (MLE_DENSITY, LS_REGRESSION, LS_DENSITY)
_ALIASES = {"mle": MLE_DENSITY, "ls": LS_REGRESSION, "ls_reg": LS_REGRESSION, "lsd": LS_DENSITY}


class InfeasibleClassError(ValueError):
    """The constraints of a function class admit no grid function."""


@dataclass(frozen=True)
class Objective:
    kind: str

    def __post_init__(self):
        k = _ALIASES.get(str(self.kind).lower(), str(self.kind).lower())
        if k not in _KINDS:
            raise ValueError(f"unknown objective {self.kind!r}; expected one of {_KINDS}")
        object.__setattr__(self, "kind", k)

    @property
    def is_density(self) -> bool:
        return self.kind != LS_REGRESSION


def _as_objective(obj) -> Objective:
    return obj if isinstance(obj, Objective) else Objective(obj)


# ---------------------------------------------------------------- samples


def snap_to_nodes(domain: GridDomain, X) -> np.ndarray:
    """Nearest member node for each row of X; exact midpoints go to the lower index."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != domain.dim:
        X = X.reshape(-1, domain.dim)
    if domain.mask.all():
        t = (X - domain.lower) / domain.step
        k = np.clip(np.ceil(t - 0.5), 0, np.array(domain.shape) - 1).astype(int)
        return np.ravel_multi_index(tuple(k.T), domain.shape).astype(int)
    out = np.empty(X.shape[0], dtype=int)
    for s in range(0, X.shape[0], 4096):
        out[s : s + 4096] = domain.nearest_index(X[s : s + 4096])
    return out


@dataclass(frozen=True, eq=False)
class Sample:
    """Draws summarized as node indices, optional responses and weights.

    For densities ``y`` is None. Weights default to 1/len and always sum to 1.
    """

    domain: GridDomain
    idx: np.ndarray
    y: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=int).ravel()
        if idx.size == 0:
            raise ValueError("sample must be nonempty")
        if idx.min() < 0 or idx.max() >= self.domain.size:
            raise DomainError("sample index outside the domain")
        w = np.full(idx.size, 1.0 / idx.size) if self.weights is None else np.asarray(self.weights, float).ravel()
        if w.shape != idx.shape or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be nonnegative, nonzero and match the draws")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "weights", w / w.sum())
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape != idx.shape or not np.all(np.isfinite(y)):
                raise ValueError("responses must be finite and match the draws")
            object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, domain: GridDomain, X, y=None, seed=None) -> "Sample":
        return cls(domain, snap_to_nodes(domain, X), y, None, seed)

    def __len__(self) -> int:
        return self.idx.size

    def node_stats(self):
        """Per-node weight c, weighted response sum s, and weighted y^2 total."""
        N = self.domain.size
        c = np.bincount(self.idx, weights=self.weights, minlength=N)
        if self.y is None:
            return c, None, 0.0
        s = np.bincount(self.idx, weights=self.weights * self.y, minlength=N)
        return c, s, float(np.dot(self.weights, self.y**2))


@dataclass(frozen=True, eq=False)
class Truth:
    """Finitely supported distribution over member nodes (with responses for regression)."""

    domain: GridDomain
    idx: np.ndarray
    probs: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=int).ravel()
        p = np.asarray(self.probs, dtype=float).ravel()
        if p.shape != idx.shape or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "probs", p / p.sum())
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())

    @classmethod
    def density(cls, f0: GridFn) -> "Truth":
        """Distribution with node masses f0 * cell volume."""
        p = f0.values * f0.domain.cell_volume
        if np.any(p < -1e-12) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("f0 must be a nonnegative density with unit integral")
        keep = np.flatnonzero(p > 0)
        return cls(f0.domain, keep, p[keep])

    @classmethod
    def regression(cls, f0: GridFn, x_probs=None, noise=(-1.0, 1.0), noise_probs=None) -> "Truth":
        """y = f0(x) + z with x ~ x_probs over nodes and z independent, finitely supported."""
        N = f0.domain.size
        px = np.full(N, 1.0 / N) if x_probs is None else np.asarray(x_probs, float)
        z = np.asarray(noise, dtype=float)
        pz = np.full(z.size, 1.0 / z.size) if noise_probs is None else np.asarray(noise_probs, float)
        ii, kk = np.meshgrid(np.arange(N), np.arange(z.size), indexing="ij")
        ii, kk = ii.ravel(), kk.ravel()
        p = px[ii] * pz[kk]
        keep = p > 0
        return cls(f0.domain, ii[keep], p[keep], f0.values[ii[keep]] + z[kk[keep]])

    def as_sample(self) -> Sample:
        return Sample(self.domain, self.idx, self.y, self.probs)

    def draw(self, nu: int, rng: np.random.Generator) -> Sample:
        k = rng.choice(self.idx.size, size=int(nu), p=self.probs)
        return Sample(self.domain, self.idx[k], None if self.y is None else self.y[k])


@dataclass(frozen=True)
class RateSpec:
    n: int
    p: float
    c: float = 1.0

    def __post_init__(self):
        if self.n < 1 or not self.p > 0 or self.c < 0:
            raise ValueError("need n >= 1, p > 0 and c >= 0")


# ---------------------------------------------------------------- objectives


def _objective_value(kind: str, c, s, q, f: np.ndarray, vol: float) -> float:
    if kind == MLE_DENSITY:
        used = c > 0
        if np.any(f[used] <= 0):
            return math.inf
        return float(-np.dot(c[used], np.log(f[used])))
    if np.any(np.isneginf(f[c > 0])):
        return math.inf
    ff = np.where(np.isfinite(f), f, 0.0)
    if kind == LS_REGRESSION:
        return float(np.dot(c, ff**2) - 2 * np.dot(s, ff) + q)
    if np.any(np.isneginf(f)):
        return math.inf
    return float(-2 * np.dot(c, ff) + vol * np.dot(ff, ff))


def _gradient(kind: str, c, s, f: np.ndarray, vol: float) -> np.ndarray:
    if kind == MLE_DENSITY:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(c > 0, -c / f, 0.0)
    if kind == LS_REGRESSION:
        return 2 * (c * f - s)
    return -2 * c + 2 * vol * f


def sample_average(obj, s: Sample, f: GridFn) -> float:
    """Weighted mean of the loss over the draws; +inf where the loss is infinite."""
    kind = _as_objective(obj).kind
    check_same_domain(f)
    if not s.domain.same_as(f.domain):
        raise DomainError("sample and function live on different domains")
    if kind == LS_REGRESSION and s.y is None:
        raise ValueError("regression needs responses")
    c, sy, q = s.node_stats()
    return _objective_value(kind, c, sy, q, f.values, f.domain.cell_volume)


def population_objective(obj, truth: Truth, f: GridFn) -> float:
    """Exact expectation of the loss under a finitely supported truth."""
    return sample_average(obj, truth.as_sample(), f)


# ---------------------------------------------------------------- classes


def _lipschitz_edges(domain: GridDomain):
    """Constraint pairs grouped into blocks of disjoint pairs.

    On a full grid with equal steps, king-move neighbours suffice (any two
    nodes are joined by a path whose length is their sup distance); otherwise
    every pair is constrained and the blocks come from a round-robin schedule.
    """
    N = domain.size
    P = domain.points
    blocks = []
    if domain.mask.all() and np.allclose(domain.step, domain.step[0]):
        grid = np.arange(N).reshape(domain.shape)
        n = domain.dim
        for d in itertools.product((-1, 0, 1), repeat=n):
            d = np.array(d)
            nz = np.flatnonzero(d)
            if nz.size == 0 or d[nz[0]] < 0:
                continue
            a = nz[0]
            src = [slice(max(0, -di), grid.shape[i] - max(0, di)) for i, di in enumerate(d)]
            dst = [slice(max(0, di), grid.shape[i] + min(0, di)) for i, di in enumerate(d)]
            I, J = grid[tuple(src)], grid[tuple(dst)]
            ka = np.indices(I.shape)[a] + src[a].start
            for parity in (0, 1):
                sel = ka % 2 == parity
                if sel.any():
                    blocks.append((I[sel], J[sel]))
    else:
        ids = list(range(N)) + ([-1] if N % 2 else [])
        M = len(ids)
        for r in range(M - 1):
            pairs = [(ids[k], ids[M - 1 - k]) for k in range(M // 2)]
            pairs = [(i, j) for i, j in pairs if i >= 0 and j >= 0]
            if pairs:
                I, J = np.array(pairs).T
                blocks.append((I, J))
            ids = [ids[0]] + [ids[-1]] + ids[1:-1]
    return [(I, J, np.max(np.abs(P[I] - P[J]), axis=1)) for I, J in blocks]


@dataclass(frozen=True, eq=False)
class FunctionClass:
    """Box bounds, optional unit integral, optional Lipschitz modulus and
    optional anchor bound |f(0)| <= anchor on a grid domain."""

    domain: GridDomain
    lower: np.ndarray = -np.inf
    upper: np.ndarray = np.inf
    kappa: Optional[float] = None
    unit_integral: bool = False
    anchor: Optional[float] = None
    _edges: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        N = self.domain.size
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (N,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (N,)).copy()
        if self.anchor is not None:
            o = self.domain.origin_index
            lo[o] = max(lo[o], -float(self.anchor))
            hi[o] = min(hi[o], float(self.anchor))
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise InfeasibleClassError("lower bound exceeds upper bound")
        if self.kappa is not None and self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.unit_integral:
            vol = self.domain.cell_volume
            if vol * lo.sum() > 1 + 1e-12 or vol * hi.sum() < 1 - 1e-12:
                raise InfeasibleClassError("box bounds cannot reach unit integral")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def edges(self):
        if self._edges is None:
            object.__setattr__(self, "_edges", _lipschitz_edges(self.domain))
        return self._edges

    def lipschitz_violation(self, v: np.ndarray) -> float:
        if self.kappa is None:
            return 0.0
        worst = 0.0
        for I, J, d in self.edges:
            worst = max(worst, float(np.max(np.abs(v[I] - v[J]) - self.kappa * d, initial=0.0)))
        return worst

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "kappa": self.kappa,
            "unit_integral": self.unit_integral,
        }


def _project_box_integral(v, lo, hi, vol, unit):
    """Clip to [lo, hi]; with ``unit`` also shift so that vol * sum = 1.

    The shifted mass t -> sum clip(v - t, lo, hi) is piecewise linear and
    nonincreasing, so the shift is found exactly by bisection over its
    sorted breakpoints followed by linear interpolation.
    """
    x = np.clip(v, lo, hi)
    if not unit:
        return x
    target = 1.0 / vol
    mass = lambda t: np.clip(v - t, lo, hi).sum()
    bp = np.concatenate([v - hi, v - lo])
    bp = np.unique(bp[np.isfinite(bp)])
    if bp.size == 0:
        t = (v.sum() - target) / v.size
    else:
        m0, m1 = mass(bp[0]), mass(bp[-1])
        if target >= m0:
            slope = np.count_nonzero(np.isinf(hi))
            if slope == 0 and target > m0 * (1 + 1e-12):
                raise InfeasibleClassError("upper bounds cannot reach unit integral")
            t = bp[0] - (target - m0) / max(slope, 1)
        elif target <= m1:
            slope = np.count_nonzero(np.isinf(lo))
            if slope == 0 and target < m1 * (1 - 1e-12):
                raise InfeasibleClassError("lower bounds exceed unit integral")
            t = bp[-1] + (m1 - target) / max(slope, 1)
        else:
            i, j = 0, bp.size - 1
            while j - i > 1:
                k = (i + j) // 2
                if mass(bp[k]) >= target:
                    i = k
                else:
                    j = k
            mi, mj = mass(bp[i]), mass(bp[j])
            t = bp[i] + (mi - target) * (bp[j] - bp[i]) / (mi - mj) if mi > mj else bp[i]
    x = np.clip(v - t, lo, hi)
    # spread the rounding leftover over interior coordinates so the sum is exact
    free = (x > lo) & (x < hi)
    r = target - x.sum()
    if free.any() and r != 0:
        x[free] = np.clip(x[free] + r / free.sum(), lo[free], hi[free])
    return x


def project_class(values, C: FunctionClass, tol: float = 1e-7, max_rounds: int = 20000) -> GridFn:
    """Euclidean projection of ``values`` onto C.

    Box and integral constraints are met exactly; the Lipschitz constraint is
    handled by Dykstra's alternating projections over blocks of disjoint
    node pairs, run until a full sweep moves no node by more than ``tol``
    and the constraint holds to ``tol``.
    """
    v = np.asarray(values.values if isinstance(values, GridFn) else values, dtype=float).ravel()
    if v.shape != (C.domain.size,) or not np.all(np.isfinite(v)):
        raise ValueError("values must be finite, one per member node")
    lo, hi, vol, unit = C.lower, C.upper, C.domain.cell_volume, C.unit_integral
    if C.kappa is None:
        return GridFn(C.domain, _project_box_integral(v, lo, hi, vol, unit))
    if C.kappa == 0:
        # constants: project the mean onto the feasible interval
        a, b = lo.max(), hi.min()
        if a > b:
            raise InfeasibleClassError("no constant fits between the bounds")
        c = 1.0 / (vol * v.size) if unit else float(np.clip(v.mean(), a, b))
        if not a - 1e-12 <= c <= b + 1e-12:
            raise InfeasibleClassError("no constant density fits between the bounds")
        return GridFn(C.domain, np.full(v.size, c))
    edges = C.edges
    x = v.copy()
    incr = [np.zeros(v.size)] + [np.zeros(I.size) for I, _, _ in edges]
    for _ in range(max_rounds):
        x_prev = x.copy()
        y = x + incr[0]
        x = _project_box_integral(y, lo, hi, vol, unit)
        incr[0] = y - x
        for k, (I, J, d) in enumerate(edges, start=1):
            # increments live on the pair differences, split evenly
            yI = x[I] + incr[k]
            yJ = x[J] - incr[k]
            diff = yI - yJ
            bound = C.kappa * d
            excess = np.sign(diff) * np.maximum(np.abs(diff) - bound, 0.0) / 2
            x[I] = yI - excess
            x[J] = yJ + excess
            incr[k] = excess
        # feasibility alone comes early; the iterates must also have settled
        settled = np.max(np.abs(x - x_prev)) <= tol * max(1.0, float(np.max(np.abs(x))))
        if settled and C.lipschitz_violation(x) <= tol:
            break
    else:
        raise InfeasibleClassError("Lipschitz projection did not converge; class may be empty")
    x = _project_box_integral(x, lo, hi, vol, unit)
    return GridFn(C.domain, x)


# ---------------------------------------------------------------- solver


@dataclass
class SolveResult:
    f: GridFn
    objective: float
    iterations: int
    history: list


def saa_solve(
    obj,
    s: Sample,
    C: FunctionClass,
    max_iter: int = 2000,
    step: str | tuple = (1.0, 0.1),
    xtol: float = 1e-12,
    seed: int = 0,
    x0=None,
    return_result: bool = False,
):
    """Minimize the sample average of the loss over C by projected gradient.

    ``step=(a, b)`` moves by a / (1 + k b) along the gradient, with the
    gradient rescaled to unit length whenever it is longer. ``step="auto"``
    uses backtracking instead (all three objectives are differentiable
    wherever finite). The best feasible iterate is returned. ``seed``
    only perturbs the starting point when ``x0`` is not given.
    """
    kind = _as_objective(obj).kind
    if kind == LS_REGRESSION and s.y is None:
        raise ValueError("regression needs responses")
    c, sy, q = s.node_stats()
    vol = C.domain.cell_volume
    fval = lambda x: _objective_value(kind, c, sy, q, x, vol)
    proj = lambda x: project_class(x, C).values
    N = C.domain.size
    if x0 is None:
        rng = np.random.default_rng(seed)
        if kind == LS_REGRESSION:
            start = np.full(N, float(np.dot(s.weights, s.y))) + 1e-3 * rng.standard_normal(N)
        else:
            start = np.full(N, 1.0 / (vol * N)) * (1 + 1e-3 * rng.standard_normal(N))
        x = proj(start)
    else:
        x = proj(np.asarray(x0.values if isinstance(x0, GridFn) else x0, dtype=float))
    F = fval(x)
    if not math.isfinite(F):
        x = proj(np.where(c > 0, np.maximum(x, np.maximum(C.lower, 0.0) + 1e-8), x))
        F = fval(x)
    history = [F]
    if isinstance(step, str) and step == "auto":
        t = 1.0
        for k in range(max_iter):
            g = _gradient(kind, c, sy, x, vol)
            while True:
                xn = proj(x - t * g)
                Fn = fval(xn)
                dx = xn - x
                if math.isfinite(Fn) and Fn <= F + np.dot(g, dx) + np.dot(dx, dx) / (2 * t) + 1e-15 * abs(F):
                    break
                t *= 0.5
                if t < 1e-20:
                    break
            if Fn < F:
                x, F = xn, Fn
                history.append(F)
            if np.max(np.abs(dx), initial=0.0) <= xtol * max(1.0, np.max(np.abs(x))):
                break
            t *= 2.0
    else:
        a, b = step
        best_x, best_F = x, F
        y = x
        for k in range(max_iter):
            g = _gradient(kind, c, sy, y, vol)
            if not np.all(np.isfinite(g)):
                y = proj(np.where(c > 0, np.maximum(y, np.maximum(C.lower, 0.0) + 1e-8), y))
                continue
            nrm = np.linalg.norm(g)
            if nrm == 0:
                break
            y_new = proj(y - a / (1 + k * b) * g / max(nrm, 1.0))
            moved = np.max(np.abs(y_new - y))
            y = y_new
            Fy = fval(y)
            if Fy < best_F:
                best_x, best_F = y, Fy
                history.append(best_F)
            # a fixed point of the projected step is a minimizer
            if moved <= xtol * max(1.0, np.max(np.abs(y))):
                break
        x, F = best_x, best_F
    if not math.isfinite(F):
        raise ValueError("every iterate has infinite objective (no mass where the data lie)")
    out = GridFn(C.domain, x)
    if return_result:
        return SolveResult(out, F, len(history) - 1, history)
    return out


def population_minimizer(obj, truth: Truth, C: FunctionClass, **kw) -> GridFn:
    """Minimizer of the exact expectation over C (same solver, weighted sample)."""
    return saa_solve(obj, truth.as_sample(), C, **kw)


# ---------------------------------------------------------------- confidence and rates


def level_set_member(obj, s: Sample, f: GridFn, delta: float) -> bool:
    if delta == math.inf:
        return True
    return sample_average(obj, s, f) <= delta


def confidence_radius(nu: float, n: int, c: float) -> float:
    """c (log nu)^(1 + 1/n) / nu^(1/n)."""
    if nu < 2:
        raise ValueError("nu must be at least 2")
    return c * math.log(nu) ** (1 + 1 / n) * nu ** (-1 / n)


def rate_r_nu(nu: float, spec: RateSpec) -> float:
    """c nu^(-1/(2 + n/p)) (log nu)^((1 + n)/(2 + n/p))."""
    if nu < 2:
        raise ValueError("nu must be at least 2")
    e = 2 + spec.n / spec.p
    return spec.c * nu ** (-1 / e) * math.log(nu) ** ((1 + spec.n) / e)


# purpose tags keep the random streams of different experiments apart
_TAG_RATE, _TAG_CONSISTENCY, _TAG_COVERAGE = 1, 2, 3


def _loglog_slope(nus, vals) -> float:
    """Least-squares slope of log(vals) on log(nus) over finite entries; nan if fewer than two."""
    v = np.asarray(vals, dtype=float)
    ok = np.isfinite(v)
    if ok.sum() < 2:
        return math.nan
    v = np.maximum(v[ok], 1e-300)
    return float(np.polyfit(np.log(np.asarray(nus, dtype=float)[ok]), np.log(v), 1)[0])


def rate_experiment(obj, truth: Truth, C: FunctionClass, nus: Sequence[int], replications: int = 50, seed: int = 0, tol: float = 1e-4, solver_opts=None) -> dict:
    """SAA suboptimality and distance to the population minimizer per sample size."""
    opts = dict(solver_opts or {})
    fstar = population_minimizer(obj, truth, C, **opts)
    vstar = population_objective(obj, truth, fstar)
    rows = []
    for k, nu in enumerate(nus):
        gaps, dists = [], []
        for r in range(replications):
            rng = np.random.default_rng([seed, _TAG_RATE, k, r])
            fh = saa_solve(obj, truth.draw(nu, rng), C, **opts)
            gaps.append(max(population_objective(obj, truth, fh) - vstar, 0.0))
            dists.append(dl(fh, fstar, tol).value)
        rows.append({
            "nu": int(nu),
            "median_gap": float(np.median(gaps)),
            "mean_gap": float(np.mean(gaps)),
            "median_dl": float(np.median(dists)),
            "gaps": gaps,
            "dl": dists,
        })
    slope = _loglog_slope(nus, [r["median_gap"] for r in rows])
    return {"population_value": vstar, "per_nu": rows, "slope": slope, "replications": replications, "seed": seed}


def consistency_experiment(obj, truth: Truth, C: FunctionClass, nus: Sequence[int], seed: int = 0, replications: int = 1, tol: float = 1e-4, solver_opts=None) -> dict:
    """Distance from SAA solutions to the population minimizer along growing samples.

    Each replication draws one nested sample sequence (the first nu draws of
    a single long sample), mirroring a sample that grows over time.
    """
    opts = dict(solver_opts or {})
    fstar = population_minimizer(obj, truth, C, **opts)
    paths = []
    for r in range(replications):
        rng = np.random.default_rng([seed, _TAG_CONSISTENCY, r])
        full = truth.draw(max(nus), rng)
        path = []
        for nu in nus:
            s = Sample(full.domain, full.idx[:nu], None if full.y is None else full.y[:nu])
            path.append(dl(saa_solve(obj, s, C, **opts), fstar, tol).value)
        paths.append(path)
    final_below = [p[-1] < p[0] for p in paths]
    return {
        "nus": [int(v) for v in nus],
        "dl": paths,
        "median_dl": np.median(np.array(paths), axis=0).tolist(),
        "fraction_decreasing": float(np.mean(final_below)),
        "decreasing": bool(all(final_below)),
    }


def coverage_experiment(obj, truth: Truth, f: GridFn, delta: float, nu: int, replications: int = 200, seed: int = 0) -> dict:
    """How often f lies in the sample level set at delta."""
    hits = 0
    for r in range(replications):
        rng = np.random.default_rng([seed, _TAG_COVERAGE, r])
        hits += level_set_member(obj, truth.draw(nu, rng), f, delta)
    return {"nu": nu, "delta": delta, "replications": replications, "frequency": hits / replications}


# ---------------------------------------------------------------- structural checks


def _lipschitz_gap(f: GridFn, kappa: float) -> float:
    D = f.domain.pairwise_sup()
    v = f.values
    return float(np.max(np.abs(v[:, None] - v[None, :]) - kappa * D))


def check_holder_pointwise(f: GridFn, g: GridFn, kappa: float, tol: float = 1e-4) -> dict:
    """Check |f(x) - g(x)| <= (1 + kappa) e^rho(x) dl(f, g) at every node."""
    dom = check_same_domain(f, g)
    if not (np.all(f.finite) and np.all(g.finite)):
        raise ValueError("both functions must be finite")
    for h in (f, g):
        if _lipschitz_gap(h, kappa) > 1e-9 * max(1.0, float(np.max(np.abs(h.values)))):
            raise ValueError(f"input is not {kappa}-Lipschitz")
    rep = dl(f, g, tol)
    rho = np.maximum(dom.norms(), np.maximum(np.abs(f.values), np.abs(g.values)))
    lhs = np.abs(f.values - g.values)
    scale = (1 + kappa) * np.exp(rho)
    viol = lhs - scale * rep.value
    holds = bool(np.all(lhs <= scale * (rep.value + tol)))
    return {"dl": rep.value, "max_violation": float(max(0.0, viol.max())), "holds": holds}


def check_equi_usc(F: Sequence[GridFn], kappa: float, eps_values=(0.01, 0.1, 1.0), rho_values=(1.0, 10.0)) -> dict:
    """Check sup over y in B(x, delta) of f(y) <= max(f(x) + eps, -rho) with delta = eps / kappa,
    for every member, node x and listed (eps, rho)."""
    worst = -math.inf
    for f in F:
        D = f.domain.pairwise_sup()
        v = f.values
        for eps in eps_values:
            delta = math.inf if kappa == 0 else eps / kappa
            near = D <= delta * (1 + 1e-12)
            sup = np.max(np.where(near, v[None, :], -np.inf), axis=1)
            for rho in rho_values:
                with np.errstate(invalid="ignore"):
                    gap = sup - np.maximum(v + eps, -rho)
                worst = max(worst, float(np.nanmax(gap)))
    return {"max_gap": worst, "holds": bool(worst <= 1e-12)}


def _excess_from(D: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    if rows.size == 0:
        return 0.0
    if cols.size == 0:
        return math.inf
    return float(D[np.ix_(rows, cols)].min(axis=1).max())


def _eps_argmin(phi: np.ndarray, eps: float) -> np.ndarray:
    m = phi.min()
    if m == math.inf:
        return np.arange(phi.size)
    return np.flatnonzero(phi <= m + eps)


def argmin_excess_check(F1, F2, phi1, phi2, tau, gamma, eps, delta, tol: float = 1e-4, D=None) -> dict:
    """Brute-force both premises and both conclusions of the level-set and
    argmin excess bounds on finite families.

    ``D[i, j]`` is the distance from ``F1[i]`` to ``F2[j]``; computed with
    tolerance ``tol`` when not supplied.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    if D is None:
        D = np.array([[0.0 if f is g else dl(f, g, tol).value for g in F2] for f in F1])
    D = np.asarray(D, dtype=float)
    near = D <= gamma
    with np.errstate(invalid="ignore"):
        best1 = np.where(near, phi1[:, None], np.inf).min(axis=0)  # per g in F2
        best2 = np.where(near, phi2[None, :], np.inf).min(axis=1)  # per g in F1
    premise_a = bool(near.any(axis=0).all() and np.all(best1 <= phi2 + tau))
    premise_b = bool(near.any(axis=1).all() and np.all(best2 <= phi1 + tau))
    out = {"premise_level": premise_a, "premise_argmin": premise_a and premise_b}
    lev2 = np.flatnonzero(phi2 <= delta)
    lev1 = np.flatnonzero(phi1 <= delta + tau)
    exs_level = _excess_from(D.T, lev2, lev1)
    out["exs_level"] = exs_level
    out["level_holds"] = (exs_level <= gamma) if premise_a else None
    a1 = _eps_argmin(phi1, eps)
    a2 = _eps_argmin(phi2, eps + 2 * tau)
    exs_arg = _excess_from(D, a1, a2)
    out["exs_argmin"] = exs_arg
    out["argmin_holds"] = (exs_arg <= gamma) if out["premise_argmin"] else None
    return out


# ---------------------------------------------------------------- estimator


class SAAEstimator(BaseEstimator):
    """Sample-average estimator of a density or regression function on a grid.

    Parameters
    ----------
    domain : GridDomain
    objective : {"mle_density", "ls_regression", "ls_density"}
    lower, upper : float or array, optional
        Nodewise bounds of the function class.
    kappa : float, optional
        Lipschitz modulus in the sup-norm.
    unit_integral : bool
        Constrain the Riemann integral to one (densities).
    max_iter : int
    step : (a, b) or "auto"
    random_state : int
    """

    def __init__(self, domain=None, objective="mle_density", lower=None, upper=None, kappa=None, unit_integral=None, max_iter=2000, step=(1.0, 0.1), random_state=0):
        self.domain = domain
        self.objective = objective
        self.lower = lower
        self.upper = upper
        self.kappa = kappa
        self.unit_integral = unit_integral
        self.max_iter = max_iter
        self.step = step
        self.random_state = random_state

    def _class(self) -> FunctionClass:
        obj = Objective(self.objective)
        unit = obj.is_density if self.unit_integral is None else bool(self.unit_integral)
        lo = (0.0 if obj.is_density else -np.inf) if self.lower is None else self.lower
        hi = np.inf if self.upper is None else self.upper
        return FunctionClass(self.domain, lo, hi, self.kappa, unit)

    def fit(self, X, y=None):
        if self.domain is None:
            raise ValueError("domain is required")
        obj = Objective(self.objective)
        if obj.kind == LS_REGRESSION and y is None:
            raise ValueError("regression needs y")
        s = Sample.from_points(self.domain, X, None if not obj.kind == LS_REGRESSION else y, self.random_state)
        res = saa_solve(obj, s, self._class(), self.max_iter, self.step, seed=self.random_state, return_result=True)
        self.estimate_ = res.f
        self.objective_value_ = res.objective
        self.n_iter_ = res.iterations
        return self

    def predict(self, X):
        return self.estimate_.values[snap_to_nodes(self.domain, X)]

    def score(self, X, y=None):
        """Negative sample-average loss (higher is better)."""
        obj = Objective(self.objective)
        s = Sample.from_points(self.domain, X, y if obj.kind == LS_REGRESSION else None)
        return -sample_average(obj, s, self.estimate_)

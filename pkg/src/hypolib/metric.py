"""Exact hypograph distances on grid domains.

For a fixed node x the map alpha -> dist((x, alpha), hypo f) is the
generalized inverse of t -> t + M(t), where M(t) is the max of f over nodes
within sup-distance t of x. Its kinks sit at c_k + M_{k-1} and c_k + M_k for
the distinct distance levels c_k, so the rho-distance is an exact max over a
finite candidate set.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .core import GridFn, check_same_domain

__all__ = [
    "DistReport",
    "dist_to_hypo",
    "dl_rho",
    "dl",
    "dhat_rho",
    "check_sandwich",
    "excess",
    "hausdorff",
    "HypoPair",
]


@dataclass(frozen=True)
class DistReport:
    value: float
    error_bound: float
    rho_max: float
    breakpoint_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def dist_to_hypo(z, f: GridFn) -> float:
    """Sup-norm distance from z = (x, alpha) to the hypograph of ``f``."""
    x, alpha = z
    x = np.atleast_1d(np.asarray(x, dtype=float))
    fin = f.finite
    d = np.max(np.abs(f.domain.points[fin] - x), axis=1)
    return float(np.min(np.maximum(d, np.maximum(0.0, alpha - f.values[fin]))))


def _dist_many(D: np.ndarray, alphas: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Row-wise distance from (x_i, alphas[i]) to hypo, D[i] = distances from x_i."""
    with np.errstate(invalid="ignore"):
        gap = np.maximum(0.0, alphas[:, None] - values[None, :])
    return np.min(np.maximum(D, gap), axis=1)


class HypoPair:
    """Precomputed breakpoint structure for the distance between two functions.

    Building it costs O(N^2 log N); afterwards each rho-distance evaluation
    is cheap, which is what the quadrature for the full distance needs.
    """

    def __init__(self, f: GridFn, g: GridFn):
        dom = check_same_domain(f, g)
        self.f, self.g = f, g
        self.domain = dom
        D = dom.pairwise_sup()
        N = dom.size
        norms = dom.norms()
        self.norms = norms
        levels = []
        kmax = 1
        cand_key, cand_val, cand_xr = [], [], []
        alpha_extent = 0.0
        for i in range(N):
            order = np.argsort(D[i], kind="stable")
            ds = D[i, order]
            Mf = np.maximum.accumulate(f.values[order])
            Mg = np.maximum.accumulate(g.values[order])
            last = np.r_[ds[1:] != ds[:-1], True]
            c, Mf, Mg = ds[last], Mf[last], Mg[last]
            levels.append((c, Mf, Mg))
            kmax = max(kmax, c.size)
            prevf = np.r_[-np.inf, Mf[:-1]]
            prevg = np.r_[-np.inf, Mg[:-1]]
            A = np.concatenate([c + Mf, c + prevf, c + Mg, c + prevg])
            A = np.unique(A[np.isfinite(A)])
            delta = np.abs(_stair_eval(c, Mf, A) - _stair_eval(c, Mg, A))
            if A.size:
                alpha_extent = max(alpha_extent, float(np.abs(A).max()))
            cand_key.append(np.abs(A))
            cand_val.append(delta)
            cand_xr.append(np.full(A.size, norms[i]))
        # padded level arrays for vectorized evaluation at alpha = +-rho
        self.C = np.full((N, kmax), np.inf)
        self.Mf = np.full((N, kmax), -np.inf)
        self.Mg = np.full((N, kmax), -np.inf)
        for i, (c, mf, mg) in enumerate(levels):
            self.C[i, : c.size] = c
            self.Mf[i, : c.size] = mf
            self.Mg[i, : c.size] = mg
        self.n_candidates = int(sum(a.size for a in cand_key))
        # group candidates by node radius; per group a prefix max over |alpha|
        keys = np.concatenate(cand_key)
        vals = np.concatenate(cand_val)
        xr = np.concatenate(cand_xr)
        self.radii = np.unique(norms)
        self._groups = []
        for r in self.radii:
            sel = xr == r
            k, v = keys[sel], vals[sel]
            o = np.argsort(k, kind="stable")
            self._groups.append((k[o], np.maximum.accumulate(v[o]) if v.size else v))
        self.rho_flat = max(float(self.radii[-1]), alpha_extent)
        self.origin_dists = (
            dist_to_hypo((np.zeros(dom.dim), 0.0), f),
            dist_to_hypo((np.zeros(dom.dim), 0.0), g),
        )

    def rho_distance(self, rho: float, radius_cap: float | None = None) -> float:
        """max |dist(z, hypo f) - dist(z, hypo g)| over nodes with norm <= radius_cap
        (default rho) and |alpha| <= rho."""
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        cap = rho if radius_cap is None else radius_cap
        best = 0.0
        for r, (k, pm) in zip(self.radii, self._groups):
            if r > cap * (1 + 1e-12) + 1e-15:
                break
            j = np.searchsorted(k, rho * (1 + 1e-15), side="right")
            if j:
                best = max(best, float(pm[j - 1]))
        inball = self.norms <= cap * (1 + 1e-12) + 1e-15
        if inball.any():
            C = self.C[inball]
            for a in (rho, -rho):
                df = np.min(np.maximum(C, a - self.Mf[inball]), axis=1)
                dg = np.min(np.maximum(C, a - self.Mg[inball]), axis=1)
                best = max(best, float(np.max(np.abs(df - dg))))
        return best

    def distance(self, tol: float = 1e-4, max_nodes: int = 200_000) -> DistReport:
        """Integral of rho-distances against e^-rho, enclosed within ``tol``."""
        if not tol > 0:
            raise ValueError("tol must be positive")
        C0 = sum(self.origin_dists)
        # rho-distances are constant beyond rho_flat, so integrating up to it
        # leaves an exact tail; the part past the tolerance radius carries
        # weight below tol/2 and is rarely refined
        R = max(0.0, self.rho_flat)
        R_tol = _tail_radius(C0, tol / 2)
        vR = self.rho_distance(R)
        tail_lo = tail_hi = vR * math.exp(-R)
        splits = [float(r) for r in self.radii if 0 < r < R]
        if 0 < R_tol < R:
            splits.append(R_tol)
        edges = [0.0] + sorted(set(splits)) + [R]
        heap = []
        lo_sum = hi_sum = 0.0
        nodes = 0
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            va = self.rho_distance(a)
            vb = self.rho_distance(b, radius_cap=a)
            nodes += 2
            lo, hi = _bracket(a, b, va, vb)
            lo_sum += lo
            hi_sum += hi
            heapq.heappush(heap, (-(hi - lo), a, b, va, vb, lo, hi))
        while heap and (hi_sum - lo_sum) + (tail_hi - tail_lo) > tol and nodes < max_nodes:
            negw, a, b, va, vb, lo, hi = heapq.heappop(heap)
            if -negw <= 0:
                heapq.heappush(heap, (negw, a, b, va, vb, lo, hi))
                break
            m = 0.5 * (a + b)
            if not a < m < b:
                continue
            vm = self.rho_distance(m, radius_cap=a)
            nodes += 1
            lo_sum -= lo
            hi_sum -= hi
            for (p, q, vp, vq) in ((a, m, va, vm), (m, b, vm, vb)):
                l2, h2 = _bracket(p, q, vp, vq)
                lo_sum += l2
                hi_sum += h2
                heapq.heappush(heap, (-(h2 - l2), p, q, vp, vq, l2, h2))
        lower = lo_sum + tail_lo
        upper = hi_sum + tail_hi
        return DistReport(
            value=0.5 * (lower + upper),
            error_bound=0.5 * (upper - lower),
            rho_max=R,
            breakpoint_count=nodes,
        )


def _stair_eval(c: np.ndarray, M: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """dist((x, alpha), hypo) from the distance levels c and prefix maxima M."""
    U = np.r_[c[1:] + M[:-1], np.inf]
    U = np.maximum.accumulate(U)
    k = np.searchsorted(U, alphas, side="left")
    k = np.minimum(k, c.size - 1)
    return np.maximum(c[k], alphas - M[k])


def _tail_radius(C: float, budget: float) -> float:
    """Smallest R with e^-R (C + 2R + 2) <= budget."""
    R = max(0.0, math.log(max(C + 2.0, 1e-300) / budget))
    while math.exp(-R) * (C + 2 * R + 2) > budget:
        R += max(1.0, 0.5 * R)
    lo, hi = 0.0, R
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if math.exp(-mid) * (C + 2 * mid + 2) > budget:
            lo = mid
        else:
            hi = mid
    return hi


def _int_lin_exp(p: float, q: float, a: float, b: float) -> float:
    """Integral of (p + q*rho) e^-rho over [a, b]."""
    if b <= a:
        return 0.0
    ea, eb = math.exp(-a), math.exp(-b)
    return p * (ea - eb) + q * ((a + 1) * ea - (b + 1) * eb)


def _bracket(a: float, b: float, va: float, vb: float) -> tuple[float, float]:
    """Lower/upper bounds on the weighted integral over [a, b) of a
    nondecreasing 1-Lipschitz function with value va at a and left limit vb at b."""
    L = b - a
    d = min(max(vb - va, 0.0), L)
    # lower: flat at va, then slope 1 to reach vb at b
    k_lo = b - d
    lo = _int_lin_exp(va, 0.0, a, k_lo) + _int_lin_exp(vb - b, 1.0, k_lo, b)
    # upper: slope 1 from va, then flat at vb
    k_hi = a + d
    hi = _int_lin_exp(va - a, 1.0, a, k_hi) + _int_lin_exp(vb, 0.0, k_hi, b)
    if hi < lo:
        hi = lo
    return lo, hi


def dl_rho(f: GridFn, g: GridFn, rho: float) -> float:
    """Exact rho-distance between hypographs over the ball of radius rho."""
    return HypoPair(f, g).rho_distance(float(rho))


def dl(f: GridFn, g: GridFn, tol: float = 1e-4) -> DistReport:
    """Attouch-Wets distance with a rigorous enclosure of half-width <= tol/2."""
    return HypoPair(f, g).distance(tol)


def _dhat_direction(D, norms, fv, gv, rho) -> float:
    sel = (norms <= rho * (1 + 1e-12) + 1e-15) & (fv >= -rho)
    if not sel.any():
        return 0.0
    fin = np.isfinite(gv)
    m = np.minimum(fv[sel], rho)
    T = _dist_many(D[np.ix_(sel, fin)], m, gv[fin])
    return float(T.max())


def dhat_rho(f: GridFn, g: GridFn, rho: float) -> float:
    """Auxiliary enlargement distance: the least tau such that every node x in
    the rho-ball with f(x) >= -rho has some y within tau where
    g(y) >= min(f(x), rho) - tau, and symmetrically."""
    dom = check_same_domain(f, g)
    D = dom.pairwise_sup()
    norms = dom.norms()
    return max(
        _dhat_direction(D, norms, f.values, g.values, rho),
        _dhat_direction(D, norms, g.values, f.values, rho),
    )


def check_sandwich(f: GridFn, g: GridFn, rho: float, tol: float = 1e-4) -> dict:
    """Evaluate both sides of e^-rho dhat_rho <= dl <= (1-e^-rho) dhat_{2rho+delta} + e^-rho (delta+rho+1)."""
    pair = HypoPair(f, g)
    delta = max(pair.origin_dists)
    lower = math.exp(-rho) * dhat_rho(f, g, rho)
    upper = (1 - math.exp(-rho)) * dhat_rho(f, g, 2 * rho + delta) + math.exp(-rho) * (delta + rho + 1)
    rep = pair.distance(tol)
    return {
        "lower": lower,
        "dl": rep.value,
        "upper": upper,
        "delta": delta,
        "holds": bool(lower <= rep.value + tol and rep.value <= upper + tol),
    }


def excess(F1: Sequence[GridFn], F2: Sequence[GridFn], tol: float = 1e-4) -> float:
    """sup over F1 of the distance to F2; inf if only F2 is empty, 0 if F1 is empty."""
    if len(F1) == 0:
        return 0.0
    if len(F2) == 0:
        return math.inf
    worst = 0.0
    for f in F1:
        best = math.inf
        for g in F2:
            if f is g:
                best = 0.0
                break
            best = min(best, dl(f, g, tol).value)
            if best <= worst:
                break
        worst = max(worst, best)
    return worst


def hausdorff(F1: Sequence[GridFn], F2: Sequence[GridFn], tol: float = 1e-4) -> float:
    return max(excess(F1, F2, tol), excess(F2, F1, tol))

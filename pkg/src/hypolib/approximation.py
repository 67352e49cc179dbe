"""Constructive approximation of usc grid functions.

Upper Moreau envelopes, the truncate / smooth / fit pipeline onto
difference-of-max functions, zeroth-order epi-spline approximations, and the
explicit cover and packing constructions used to bound metric entropy.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import (
    NEG_INF,
    BoxPartition,
    DomainError,
    EmptyHypographError,
    EpiSpline0,
    GridDomain,
    GridFn,
    pa_to_gridfn,
)
from .metric import _dhat_direction, dl
from .pafit import pa_fit

__all__ = [
    "moreau_envelope",
    "truncate_and_restrict",
    "PipelineStage",
    "PipelineSchedule",
    "hypo_approx_sequence",
    "meshsize",
    "epispline_approx",
    "CoverParams",
    "cover_params",
    "quantize_to_cover",
    "PackingFamily",
    "packing_family",
    "verify_packing_separation",
]


def _in_ball(domain: GridDomain, rho: float) -> np.ndarray:
    return domain.norms() <= rho * (1 + 1e-12) + 1e-15


def moreau_envelope(f: GridFn, lam: float, chunk: int = 2048) -> GridFn:
    """Upper envelope max_y f(y) - |y - x|_2^2 / (2 lam) over finite nodes y.

    Brute force over all node pairs, processed in row chunks to bound memory.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    P = f.domain.points
    fin = f.finite
    Y, fy = P[fin], f.values[fin]
    out = np.empty(P.shape[0])
    for s in range(0, P.shape[0], chunk):
        X = P[s : s + chunk]
        sq = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)
        out[s : s + chunk] = np.max(fy[None, :] - sq / (2.0 * lam), axis=1)
    return f.with_values(out)


def truncate_and_restrict(f: GridFn, cap: float, rho: float) -> GridFn:
    """min(f, cap) on member nodes in the rho-ball, -inf elsewhere."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    v = np.where(_in_ball(f.domain, rho), np.minimum(f.values, cap), NEG_INF)
    if not np.isfinite(v).any():
        raise EmptyHypographError("no finite value left inside the rho-ball")
    return f.with_values(v)


@dataclass(frozen=True)
class PipelineStage:
    cap: float
    lam: float
    rho: float
    q: int


@dataclass(frozen=True)
class PipelineSchedule:
    """Stages of (truncation cap, envelope parameter, ball radius, piece budget).

    Caps and radii must be nondecreasing, lam strictly decreasing and q
    nondecreasing along the stages.
    """

    stages: tuple

    def __post_init__(self):
        st = tuple(s if isinstance(s, PipelineStage) else PipelineStage(**s) if isinstance(s, dict) else PipelineStage(*s) for s in self.stages)
        if not st:
            raise ValueError("schedule must have at least one stage")
        for a, b in zip(st, st[1:]):
            if b.cap < a.cap or b.rho < a.rho or b.q < a.q:
                raise ValueError("cap, rho and q must be nondecreasing")
            if not b.lam < a.lam:
                raise ValueError("lam must be strictly decreasing")
        for s in st:
            if not s.lam > 0 or s.rho < 0 or s.q < 1:
                raise ValueError(f"invalid stage {s}")
        object.__setattr__(self, "stages", st)

    @classmethod
    def from_lists(cls, caps, lams, rhos, qs) -> "PipelineSchedule":
        return cls(tuple(PipelineStage(float(c), float(l), float(r), int(q)) for c, l, r, q in zip(caps, lams, rhos, qs)))

    def to_dict(self) -> dict:
        return {"stages": [{"cap": s.cap, "lam": s.lam, "rho": s.rho, "q": s.q} for s in self.stages]}


def hypo_approx_sequence(
    f: GridFn,
    schedule: PipelineSchedule,
    tol: float = 1e-4,
    restarts: int = 10,
    iterations: int = 100,
    seed: int = 0,
) -> list:
    """Run truncation, envelope smoothing and difference-of-max fitting per stage.

    Returns a list of ``(PaDiff, dl_to_target)`` pairs, one per stage.
    """
    out = []
    for k, st in enumerate(schedule.stages):
        capped = f.with_values(np.minimum(f.values, st.cap))
        env = moreau_envelope(capped, st.lam)
        phi = pa_fit(env, st.q, st.rho, restarts=restarts, iterations=iterations, seed=seed + k)
        rep = dl(pa_to_gridfn(phi, f.domain), f, tol)
        out.append((phi, rep.value))
    return out


def meshsize(partition: BoxPartition, rho: float) -> float:
    """Largest cell diameter among cells meeting the rho-ball; inf once the
    unbounded exterior cell meets it."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho >= partition.half_width:
        return math.inf
    return partition.width


def _cell_maxima(f: GridFn, partition: BoxPartition) -> np.ndarray:
    """Max of f over member nodes in each closed cell; nan for cells with no node."""
    cm = np.full(partition.n_cells, np.nan)
    for cells, v in zip(partition.adjacent_cells(f.domain.points), f.values):
        for c in cells:
            if not (cm[c] >= v):
                cm[c] = v
    return cm


def epispline_approx(f: GridFn, partition: BoxPartition, rho: float, rho_prime: float) -> EpiSpline0:
    """Epi-spline s with cell value -clip(max f on the closed cell, [-rho', rho']).

    Cells containing no member node get -rho'. Then -s is a usc piecewise
    constant function within the meshsize of f in the auxiliary distance.
    """
    if not rho_prime > rho:
        raise ValueError("rho_prime must exceed rho")
    mu = meshsize(partition, rho)
    if mu > rho:
        raise ValueError(f"meshsize {mu} exceeds rho = {rho}")
    if partition.dim != f.domain.dim:
        raise DomainError("partition and function dimensions differ")
    cm = _cell_maxima(f, partition)
    vals = np.where(np.isnan(cm), -rho_prime, -np.clip(cm, -rho_prime, rho_prime))
    return EpiSpline0(partition, vals)


@dataclass(frozen=True)
class CoverParams:
    eps: float
    r: float
    gammas: tuple
    omega: float
    n: int
    eps_bar: float
    rho: float
    nu: int
    m: int
    K: int
    sigma: np.ndarray = field(repr=False)
    constants: dict = field(default_factory=dict)
    log_size: float = 0.0
    bound: float = 0.0
    compat: bool = False

    @property
    def partition(self) -> BoxPartition:
        return BoxPartition(self.n, self.omega * self.rho, self.nu)

    @property
    def bound_holds(self) -> bool:
        return self.log_size <= self.bound * (1 + 1e-12)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "r": self.r,
            "gammas": list(self.gammas),
            "omega": self.omega,
            "n": self.n,
            "eps_bar": self.eps_bar,
            "rho": self.rho,
            "nu": self.nu,
            "m": self.m,
            "K": self.K,
            "sigma_first": float(self.sigma[0]),
            "sigma_last": float(self.sigma[-1]),
            "constants": dict(self.constants),
            "log_size": self.log_size,
            "bound": self.bound,
            "bound_holds": self.bound_holds,
            "compat": self.compat,
        }


def _cover_rho(eps, r, g1):
    return 2 * (r + 1) / r * (math.log(1 / eps) + math.log(1 / g1) + r / 2 + math.log(r + 1)) - 1


def _largest_eps_bar(r, g1, g2, cap):
    """Largest eps <= cap with cover radius > g2 * eps. The gap is decreasing in eps."""
    gap = lambda e: _cover_rho(e, r, g1) - g2 * e
    if gap(cap) > 0:
        return cap
    lo = cap
    while gap(lo) <= 0:
        lo /= 2
    return brentq(gap, lo, cap, xtol=1e-15, rtol=1e-14) * (1 - 1e-12)


def cover_params(
    eps: float,
    r: float,
    gammas=(1 / 3, 1 / 3, 1 / 3),
    omega: float = 1.001,
    n: int = 1,
    eps_bar: float | None = None,
    compat: bool = False,
) -> CoverParams:
    """Constants of the explicit epsilon-cover of an r-bounded family.

    Without ``eps_bar`` the largest admissible value is searched for, capped
    at 1/e. ``compat=True`` allows omega <= 1 to reproduce published figures.
    """
    g1, g2, g3 = (float(g) for g in gammas)
    if min(g1, g2, g3) <= 0 or abs(g1 + g2 + g3 - 1) > 1e-9:
        raise ValueError("gammas must be positive and sum to 1")
    if not r > 0 or not eps > 0 or n < 1:
        raise ValueError("eps, r must be positive and n >= 1")
    if not omega > 1 and not compat:
        raise ValueError("omega must exceed 1 (use compat=True to allow otherwise)")
    if not omega > 0:
        raise ValueError("omega must be positive")
    if eps_bar is None:
        eps_bar = _largest_eps_bar(r, g1, g2, math.exp(-1))
    elif not (0 < eps_bar < 1) or not _cover_rho(eps_bar, r, g1) > g2 * eps_bar:
        raise ValueError("eps_bar must lie in (0, 1) and satisfy the radius condition")
    if eps > eps_bar:
        raise ValueError(f"eps = {eps} exceeds eps_bar = {eps_bar}")
    rho = _cover_rho(eps, r, g1)
    nu = math.ceil(2 * omega * rho / (g2 * eps))
    m = math.ceil(omega * rho / (g3 * eps)) + 1
    K = nu**n + 1
    j = np.arange(1, m + 1)
    sigma = -omega * rho + 2 * (j - 1) * omega * rho / (m - 1)
    L = math.log(1 / eps_bar)
    c1 = 2 * (r + 1) / r
    c2 = c1 * (math.log(1 / g1) + r / 2 + math.log(r + 1)) - 1
    c3 = 2 * omega / g2
    c4 = omega / g3
    c5 = c1 * c3 + (c2 * c3 + 1) / L
    c6 = c1 * c4 + (c2 * c4 + 2) / L
    c7 = c5 + 1 / (L / eps_bar)
    bracket = math.log(c6) / L + 1 + math.exp(-1)
    le = math.log(1 / eps)
    bound = c7**n * bracket * eps ** (-n) * le ** (n + 1)
    consts = {"c1": c1, "c2": c2, "c3": c3, "c4": c4, "c5": c5, "c6": c6, "c7": c7, "bracket": bracket}
    return CoverParams(
        eps=float(eps), r=float(r), gammas=(g1, g2, g3), omega=float(omega), n=int(n),
        eps_bar=float(eps_bar), rho=rho, nu=nu, m=m, K=K, sigma=sigma, constants=consts,
        log_size=(nu**n + 1) * math.log(m), bound=bound, compat=compat,
    )


def _round_up_ties(v: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Nearest grid value; exact midpoints go to the larger one."""
    j = np.clip(np.searchsorted(sigma, v), 1, sigma.size - 1)
    lo, hi = sigma[j - 1], sigma[j]
    pick_hi = (hi - v) <= (v - lo) * (1 + 1e-12)
    return np.where(pick_hi, hi, lo)


def quantize_to_cover(f: GridFn, p: CoverParams, rho_prime: float | None = None) -> GridFn:
    """Nearest member of the finite cover: quantized piecewise constant on the
    cover partition, taking the max over adjacent cells on faces."""
    from .metric import dist_to_hypo

    if f.domain.dim != p.n:
        raise DomainError("function dimension does not match the cover")
    if dist_to_hypo((np.zeros(p.n), 0.0), f) > p.r * (1 + 1e-12):
        raise ValueError("the origin is farther than r from the hypograph")
    rp = p.omega * p.rho if rho_prime is None else float(rho_prime)
    part = p.partition
    s = epispline_approx(f, part, p.rho, rp)
    u = _round_up_ties(-s.cell_values, p.sigma)
    vals = np.array([u[c].max() for c in part.adjacent_cells(f.domain.points)])
    return f.with_values(vals)


@dataclass(frozen=True)
class PackingFamily:
    rho: float
    eps: float
    n: int
    nu: int
    domain: GridDomain
    lattice: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)
    members: list = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.members)

    def log_lower_bound(self) -> float:
        """The closed-form lower bound on log covering numbers."""
        c = self.rho * math.exp(-self.rho) / 6
        return c**self.n * 0.5 * self.eps ** (-self.n) * math.log(1 / self.eps)


def packing_family(rho: float, eps: float, n: int = 1, max_members: int = 10**6) -> PackingFamily:
    """All functions taking one of nu levels in [-rho, 0) at each interior
    lattice point of [0, rho]^n and -inf elsewhere."""
    if not rho > 0 or not eps > 0:
        raise ValueError("rho and eps must be positive")
    if eps > rho * math.exp(-rho) / 6 * (1 + 1e-12):
        raise ValueError("eps must not exceed rho exp(-rho) / 6")
    nu = math.floor(rho * math.exp(-rho) / (3 * eps) * (1 + 1e-12))
    if nu < 2:
        raise ValueError("lattice too coarse")
    npts = (nu - 1) ** n
    if nu**npts > max_members:
        raise ValueError(f"family has {nu}^{npts} members, above the cap {max_members}")
    h = rho / nu
    dom = GridDomain.regular(0.0, rho, h, n=n)
    k = np.rint(dom.points / h).astype(int)
    interior = np.all((k >= 1) & (k <= nu - 1), axis=1)
    lattice = np.flatnonzero(interior)
    levels = -np.arange(1, nu + 1) * rho / nu
    members = []
    for combo in itertools.product(range(nu), repeat=npts):
        v = np.full(dom.size, NEG_INF)
        v[lattice] = levels[list(combo)]
        members.append(GridFn(dom, v))
    return PackingFamily(float(rho), float(eps), int(n), nu, dom, lattice, levels, members)


def verify_packing_separation(fam: PackingFamily) -> dict:
    """Pairwise exp(-rho) * dhat_rho over the family against eps."""
    dom = fam.domain
    D = dom.pairwise_sup()
    norms = dom.norms()
    w = math.exp(-fam.rho)
    worst = math.inf
    pairs = 0
    for i, j in itertools.combinations(range(fam.count), 2):
        f, g = fam.members[i].values, fam.members[j].values
        d = max(_dhat_direction(D, norms, f, g, fam.rho), _dhat_direction(D, norms, g, f, fam.rho))
        worst = min(worst, w * d)
        pairs += 1
    log_count = fam.count and math.log(fam.count)
    return {
        "members": fam.count,
        "pairs": pairs,
        "nu": fam.nu,
        "min_pairwise_lower": worst if pairs else math.inf,
        "separated": bool(pairs == 0 or worst > fam.eps),
        "log_members": log_count,
        "log_lower_bound": fam.log_lower_bound(),
    }

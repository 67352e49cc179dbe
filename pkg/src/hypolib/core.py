"""Domain types: grid domains, grid-sampled usc functions, difference-of-max
functions and zeroth-order epi-splines.

Extended reals are plain floats; ``NEG_INF`` is IEEE ``-inf`` so hypograph
comparisons stay exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NEG_INF = -math.inf
_SNAP = 1e-9


class DomainError(ValueError):
    """Point is not a member node, or two functions live on different grids."""


class EmptyHypographError(ValueError):
    """Every value is -inf, so the hypograph would be empty."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Uniform grid ``lower + k * step`` per axis, optionally masked.

    The member nodes model a closed set S; the origin must be a member.
    """

    lower: np.ndarray
    upper: np.ndarray
    step: np.ndarray
    mask: Optional[np.ndarray] = None
    shape: tuple = field(init=False)
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        step = np.atleast_1d(np.asarray(self.step, dtype=float))
        if step.shape == (1,) and lower.shape[0] > 1:
            step = np.full(lower.shape, step[0])
        if not (lower.shape == upper.shape == step.shape) or lower.ndim != 1:
            raise ValueError("lower, upper and step must be 1-d of equal length")
        if np.any(step <= 0):
            raise ValueError("step must be positive")
        if np.any(upper < lower):
            raise ValueError("upper must be >= lower")
        counts = np.rint((upper - lower) / step).astype(int) + 1
        if np.any(np.abs(lower + (counts - 1) * step - upper) > _SNAP * np.maximum(1.0, np.abs(upper))):
            raise ValueError("upper - lower must be a multiple of step")
        k0 = -lower / step
        if np.any(np.abs(k0 - np.rint(k0)) > 1e-7) or np.any(lower > 0) or np.any(upper < 0):
            raise ValueError("the origin must be a grid node")
        shape = tuple(int(c) for c in counts)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool).reshape(shape)
        else:
            mask = np.ones(shape, dtype=bool)
        origin = tuple(int(round(v)) for v in k0)
        if not mask[origin]:
            raise ValueError("the origin must be a member node")
        axes = [lower[i] + np.arange(shape[i]) * step[i] for i in range(len(shape))]
        # snap tiny float noise so that the origin is exactly zero
        axes = [np.where(np.abs(a) < _SNAP * s, 0.0, a) for a, s in zip(axes, step)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m[mask] for m in mesh], axis=1)
        object.__setattr__(self, "lower", _frozen(lower))
        object.__setattr__(self, "upper", _frozen(upper))
        object.__setattr__(self, "step", _frozen(step))
        object.__setattr__(self, "mask", _frozen(mask, bool))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "points", _frozen(pts))
        flat = -np.ones(int(np.prod(shape)), dtype=int)
        flat[mask.ravel()] = np.arange(pts.shape[0])
        object.__setattr__(self, "_flat_to_member", _frozen(flat, int))

    @classmethod
    def regular(cls, lower, upper, step, n: Optional[int] = None) -> "GridDomain":
        """Grid with the same bounds on every axis, e.g. ``regular(-1, 1, 0.5, n=2)``."""
        if n is not None:
            lower = np.full(n, float(lower))
            upper = np.full(n, float(upper))
            step = np.full(n, float(step))
        return cls(lower, upper, step)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.step))

    @property
    def origin_index(self) -> int:
        return self.index_of(np.zeros(self.dim))

    def norms(self) -> np.ndarray:
        """Sup-norm of every member node."""
        return np.max(np.abs(self.points), axis=1)

    def index_of(self, x) -> int:
        """Member index of node ``x``; raises DomainError otherwise."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise DomainError(f"expected a point of dimension {self.dim}")
        k = (x - self.lower) / self.step
        kr = np.rint(k)
        if np.any(np.abs(k - kr) > 1e-7) or np.any(kr < 0) or np.any(kr >= self.shape):
            raise DomainError(f"{x.tolist()} is not a grid node")
        flat = int(np.ravel_multi_index(tuple(kr.astype(int)), self.shape))
        idx = int(self._flat_to_member[flat])
        if idx < 0:
            raise DomainError(f"{x.tolist()} is not a member node")
        return idx

    def nearest_index(self, x) -> np.ndarray:
        """Indices of the member nodes nearest (sup-norm) to each row of ``x``.

        Ties go to the lowest member index.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = np.max(np.abs(x[:, None, :] - self.points[None, :, :]), axis=2)
        return np.argmin(d, axis=1)

    def pairwise_sup(self) -> np.ndarray:
        """(N, N) matrix of sup-norm distances between member nodes."""
        p = self.points
        return np.max(np.abs(p[:, None, :] - p[None, :, :]), axis=2)

    def same_as(self, other: "GridDomain") -> bool:
        return (
            self is other
            or (
                self.shape == other.shape
                and np.allclose(self.lower, other.lower, rtol=0, atol=1e-12)
                and np.allclose(self.step, other.step, rtol=0, atol=1e-12)
                and np.array_equal(self.mask, other.mask)
            )
        )

    def to_dict(self) -> dict:
        d = {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "step": self.step.tolist()}
        if not self.mask.all():
            d["mask"] = self.mask.astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridDomain":
        return cls(d["lower"], d["upper"], d["step"], d.get("mask"))


def check_same_domain(*fns: "GridFn") -> GridDomain:
    dom = fns[0].domain
    for g in fns[1:]:
        if not dom.same_as(g.domain):
            raise DomainError("functions live on different grid domains")
    return dom


@dataclass(frozen=True, eq=False)
class GridFn:
    """Extended-real function on the member nodes of a GridDomain."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape != (self.domain.size,):
            raise ValueError(f"expected {self.domain.size} values, got {v.size}")
        if np.any(np.isnan(v)) or np.any(v == math.inf):
            raise ValueError("values must be finite or -inf")
        if not np.any(np.isfinite(v)):
            raise EmptyHypographError("function is -inf at every node")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_callable(cls, domain: GridDomain, fn) -> "GridFn":
        """Sample ``fn`` (vectorized over rows of an (N, n) array) at member nodes."""
        return cls(domain, np.asarray(fn(domain.points), dtype=float))

    @classmethod
    def constant(cls, domain: GridDomain, c: float) -> "GridFn":
        return cls(domain, np.full(domain.size, float(c)))

    def __call__(self, x) -> float:
        return gridfn_eval(self, x)

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def with_values(self, values) -> "GridFn":
        return GridFn(self.domain, values)

    def __neg__(self) -> "GridFn":
        # only meaningful for finite-valued functions
        return GridFn(self.domain, -self.values)


def gridfn_eval(f: GridFn, x) -> float:
    """Stored value of ``f`` at member node ``x``."""
    return float(f.values[f.domain.index_of(x)])


@dataclass(frozen=True, eq=False)
class MaxAffine:
    """x -> max_k <slopes[k], x> + intercepts[k]."""

    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        b = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        if a.shape[0] == 0 or a.shape[0] != b.shape[0]:
            raise ValueError("need a nonempty, matching list of slopes and intercepts")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("affine pieces must be finite")
        object.__setattr__(self, "slopes", _frozen(a))
        object.__setattr__(self, "intercepts", _frozen(b))

    @classmethod
    def from_pieces(cls, pieces: Sequence) -> "MaxAffine":
        """From a list of ``(a, alpha)`` pairs; ``a`` may be a scalar in 1-d."""
        a = [np.atleast_1d(np.asarray(p[0], dtype=float)) for p in pieces]
        return cls(np.stack(a), [float(p[1]) for p in pieces])

    @property
    def n_pieces(self) -> int:
        return self.slopes.shape[0]

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    def pieces_at(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.slopes.T + self.intercepts

    def __call__(self, X) -> np.ndarray:
        return self.pieces_at(X).max(axis=1)

    def to_dict(self) -> dict:
        return {"slopes": self.slopes.tolist(), "intercepts": self.intercepts.tolist()}


@dataclass(frozen=True, eq=False)
class PaDiff:
    """plus(x) - minus(x) on the sup-norm ball of radius ``radius``, -inf outside.

    ``domain`` optionally restricts evaluation to the member nodes of a grid.
    """

    plus: MaxAffine
    minus: MaxAffine
    radius: float
    domain: Optional[GridDomain] = None

    def __post_init__(self):
        if self.plus.dim != self.minus.dim:
            raise ValueError("plus and minus must share a dimension")
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.plus.dim

    @property
    def q(self) -> int:
        return max(self.plus.n_pieces, self.minus.n_pieces)

    def lipschitz_bound(self) -> float:
        """Sup-norm Lipschitz constant of plus - minus on the ball."""
        return float(np.abs(self.plus.slopes).sum(axis=1).max() + np.abs(self.minus.slopes).sum(axis=1).max())

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self.plus(X) - self.minus(X)
        inside = np.max(np.abs(X), axis=1) <= self.radius * (1 + 1e-12)
        if self.domain is not None:
            inside &= _is_member(self.domain, X)
        return np.where(inside, out, NEG_INF)

    def __call__(self, x) -> float:
        return pa_eval(self, x)

    def to_dict(self) -> dict:
        d = {
            "schema": SCHEMA,
            "type": "PaDiff",
            "plus": self.plus.to_dict(),
            "minus": self.minus.to_dict(),
            "radius": self.radius,
        }
        if self.domain is not None:
            d["domain"] = self.domain.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PaDiff":
        _check_schema(d, "PaDiff")
        dom = GridDomain.from_dict(d["domain"]) if "domain" in d else None
        return cls(
            MaxAffine(d["plus"]["slopes"], d["plus"]["intercepts"]),
            MaxAffine(d["minus"]["slopes"], d["minus"]["intercepts"]),
            d["radius"],
            dom,
        )


def _is_member(domain: GridDomain, X: np.ndarray) -> np.ndarray:
    k = (X - domain.lower) / domain.step
    kr = np.rint(k)
    ok = np.all(np.abs(k - kr) <= 1e-7, axis=1) & np.all(kr >= 0, axis=1) & np.all(kr < domain.shape, axis=1)
    out = np.zeros(X.shape[0], dtype=bool)
    if ok.any():
        flat = np.ravel_multi_index(tuple(kr[ok].astype(int).T), domain.shape)
        out[ok] = domain._flat_to_member[flat] >= 0
    return out


def pa_eval(f: PaDiff, x) -> float:
    """Value of a difference-of-max function at a single point."""
    return float(f.evaluate(np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])


def pa_to_gridfn(f: PaDiff, domain: GridDomain) -> GridFn:
    """Sample ``f`` at the member nodes of ``domain``."""
    vals = f.evaluate(domain.points)
    if not np.any(np.isfinite(vals)):
        raise EmptyHypographError("the radius-ball misses every member node")
    return GridFn(domain, vals)


@dataclass(frozen=True, eq=False)
class BoxPartition:
    """[-half_width, half_width]^n cut into cells_per_axis^n equal boxes, plus
    the exterior cell (index ``n_cells - 1`` in flattened value vectors)."""

    dim: int
    half_width: float
    cells_per_axis: int

    def __post_init__(self):
        if self.dim < 1 or self.cells_per_axis < 1 or not self.half_width > 0:
            raise ValueError("invalid partition")

    @property
    def width(self) -> float:
        return 2.0 * self.half_width / self.cells_per_axis

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.dim + 1

    @property
    def grid_shape(self) -> tuple:
        return (self.cells_per_axis,) * self.dim

    def adjacent_cells(self, X, rtol: float = 1e-9) -> list:
        """For each row of ``X``, the flat indices of cells whose closure contains it."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B, w, nu = self.half_width, self.width, self.cells_per_axis
        out = []
        eps = rtol * max(1.0, B)
        for x in X:
            per_axis = []
            outside = False
            on_boundary = False
            for xi in x:
                if xi < -B - eps or xi > B + eps:
                    outside = True
                    break
                if abs(abs(xi) - B) <= eps:
                    on_boundary = True
                t = (xi + B) / w
                tr = round(t)
                if abs(t - tr) * w <= eps:
                    cand = [c for c in (tr - 1, tr) if 0 <= c < nu]
                else:
                    cand = [int(math.floor(t))]
                per_axis.append(cand)
            if outside:
                out.append([self.n_cells - 1])
                continue
            cells = [int(np.ravel_multi_index(idx, self.grid_shape)) for idx in _product(per_axis)]
            if on_boundary:
                cells.append(self.n_cells - 1)
            out.append(cells)
        return out

    def to_dict(self) -> dict:
        return {"dim": self.dim, "half_width": self.half_width, "cells_per_axis": self.cells_per_axis}


def _product(lists):
    if not lists:
        yield ()
        return
    for head in lists[0]:
        for tail in _product(lists[1:]):
            yield (head,) + tail


@dataclass(frozen=True, eq=False)
class EpiSpline0:
    """Piecewise-constant lsc function on a BoxPartition.

    ``cell_values`` has ``partition.n_cells`` entries; the last one is the
    exterior cell. Values on shared faces are the min over adjacent cells.
    """

    partition: BoxPartition
    cell_values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.cell_values, dtype=float).ravel()
        if v.shape != (self.partition.n_cells,):
            raise ValueError(f"expected {self.partition.n_cells} cell values")
        if not np.all(np.isfinite(v)):
            raise ValueError("epi-spline cell values must be real")
        object.__setattr__(self, "cell_values", _frozen(v))

    def evaluate(self, X) -> np.ndarray:
        cells = self.partition.adjacent_cells(X)
        return np.array([self.cell_values[c].min() for c in cells])

    def __call__(self, x) -> float:
        return float(self.evaluate(np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])

    def negated_on(self, domain: GridDomain) -> GridFn:
        """The usc function -s sampled at member nodes (max over adjacent cells)."""
        return GridFn(domain, -self.evaluate(domain.points))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "type": "EpiSpline0",
            "partition": self.partition.to_dict(),
            "cell_values": self.cell_values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpiSpline0":
        _check_schema(d, "EpiSpline0")
        return cls(BoxPartition(**d["partition"]), d["cell_values"])


SCHEMA = "hypolib-v1"


def _check_schema(d: dict, kind: str) -> None:
    if d.get("schema") != SCHEMA:
        raise ValueError(f"unsupported schema {d.get('schema')!r}, expected {SCHEMA!r}")
    if d.get("type") != kind:
        raise ValueError(f"expected a {kind} document, got {d.get('type')!r}")

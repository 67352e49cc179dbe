"""CSV for grid functions, JSON for structured objects."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .core import NEG_INF, EpiSpline0, GridDomain, GridFn, PaDiff


class FormatError(ValueError):
    """Malformed input file; the message carries line/field diagnostics."""


def _fmt(v: float) -> str:
    if v == NEG_INF:
        return "-inf"
    return repr(float(v))


def gridfn_to_csv(f: GridFn, path=None) -> str:
    """Write ``x1,...,xn,value`` rows (one per member node); returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(f.domain.dim)] + ["value"])
    for x, v in zip(f.domain.points, f.values):
        w.writerow([_fmt(c) for c in x] + [_fmt(v)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_float(tok: str, line: int, field: str) -> float:
    t = tok.strip().lower()
    if t in ("-inf", "-infinity"):
        return NEG_INF
    try:
        v = float(t)
    except ValueError:
        raise FormatError(f"line {line}, field {field!r}: cannot parse {tok!r} as a number") from None
    if math.isnan(v) or v == math.inf:
        raise FormatError(f"line {line}, field {field!r}: value {tok!r} not allowed")
    return v


def gridfn_from_csv(source, domain: GridDomain | None = None) -> GridFn:
    """Read a GridFn. Without ``domain`` the grid is inferred from the rows:
    bounds from min/max, spacing from the smallest coordinate gap, and
    missing nodes become masked out."""
    if isinstance(source, (str, Path)) and "\n" not in str(source):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise FormatError(f"cannot read {source}: {exc}") from None
    else:
        text = str(source)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("line 1: empty file")
    header = [h.strip() for h in rows[0]]
    n = len(header) - 1
    if n < 1 or header[-1] != "value" or header[:-1] != [f"x{i + 1}" for i in range(n)]:
        raise FormatError(f"line 1: header must be x1,...,xn,value; got {','.join(header)}")
    pts, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != n + 1:
            raise FormatError(f"line {lineno}: expected {n + 1} fields, got {len(row)}")
        x = [_parse_float(row[i], lineno, header[i]) for i in range(n)]
        if not all(math.isfinite(c) for c in x):
            raise FormatError(f"line {lineno}: coordinates must be finite")
        pts.append(x)
        vals.append(_parse_float(row[n], lineno, "value"))
    if not pts:
        raise FormatError("no data rows")
    P = np.array(pts)
    V = np.array(vals)
    if domain is None:
        domain = _infer_domain(P)
    out = np.full(domain.size, np.nan)
    for i, x in enumerate(P):
        try:
            j = domain.index_of(x)
        except ValueError as exc:
            raise FormatError(f"line {i + 2}: {exc}") from None
        if not np.isnan(out[j]):
            raise FormatError(f"line {i + 2}: duplicate node {x.tolist()}")
        out[j] = V[i]
    if np.isnan(out).any():
        raise FormatError("some member nodes have no value")
    try:
        return GridFn(domain, out)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def _infer_domain(P: np.ndarray) -> GridDomain:
    lower = P.min(axis=0)
    upper = P.max(axis=0)
    step = np.ones(P.shape[1])
    for i in range(P.shape[1]):
        u = np.unique(P[:, i])
        if u.size > 1:
            step[i] = np.diff(u).min()
    try:
        full = GridDomain(lower, upper, step)
    except ValueError as exc:
        raise FormatError(f"cannot infer a grid: {exc}") from None
    mask = np.zeros(full.shape, dtype=bool)
    k = np.rint((P - lower) / step).astype(int)
    mask[tuple(k.T)] = True
    if mask.all():
        return full
    try:
        return GridDomain(lower, upper, step, mask)
    except ValueError as exc:
        raise FormatError(f"cannot infer a grid: {exc}") from None


def dump_json(obj, path=None) -> str:
    """Deterministic JSON: sorted keys, ``-Infinity``/``Infinity`` for infinities."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        return float(o)
    if hasattr(o, "to_dict"):
        return _jsonable(o.to_dict())
    return o


def load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_structured(path):
    """Load a PaDiff or EpiSpline0 JSON document."""
    d = load_json(path)
    kind = d.get("type")
    if kind == "PaDiff":
        return PaDiff.from_dict(d)
    if kind == "EpiSpline0":
        return EpiSpline0.from_dict(d)
    raise FormatError(f"{path}: unknown document type {kind!r}")

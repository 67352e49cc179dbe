"""Batch command-line interface.

Every command writes one JSON report with the fields command, inputs,
parameters, results, version and seed. Exit status is 0 on success, 2 for
invalid input or parameters and 3 when a computation fails.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .approximation import (
    PipelineSchedule,
    cover_params,
    hypo_approx_sequence,
    packing_family,
    quantize_to_cover,
    verify_packing_separation,
)
from .core import SCHEMA, DomainError, GridDomain, GridFn, pa_to_gridfn
from .estimation import (
    FunctionClass,
    Objective,
    RateSpec,
    Sample,
    Truth,
    confidence_radius,
    level_set_member,
    rate_experiment,
    rate_r_nu,
    saa_solve,
    sample_average,
)
from .io import FormatError, dump_json, gridfn_from_csv, gridfn_to_csv, load_json
from .metric import HypoPair, dhat_rho

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3


class ValidationError(ValueError):
    pass


# ------------------------------------------------------------------ parser


def _parser(suppress: bool = False) -> argparse.ArgumentParser:
    kw = {"argument_default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(prog="hypolib", description="Hypo-distances, approximations and SAA estimation on grids.", **kw)
    p.add_argument("--version", action="version", version=f"hypolib {__version__}")
    common = argparse.ArgumentParser(add_help=False, **kw)
    common.add_argument("--config", help="JSON file with parameter defaults; explicit flags win")
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    common.add_argument("--threads", type=int, help="cap on worker threads (env HYPOLIB_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dist", parents=[common], help="hypo-distance between two CSV functions", **kw)
    d.add_argument("--f", required=not suppress)
    d.add_argument("--g", required=not suppress)
    d.add_argument("--tol", type=float, **({} if suppress else {"default": 1e-4}))
    d.add_argument("--rho", type=float, help="also report the rho-distance and the auxiliary distance")

    a = sub.add_parser("approx", help="approximation constructions", **kw)
    asub = a.add_subparsers(dest="approx_command", required=True)
    pl = asub.add_parser("pipeline", parents=[common], **kw)
    pl.add_argument("--target", required=not suppress)
    pl.add_argument("--schedule", required=not suppress, help="JSON with a 'stages' list of {cap, lam, rho, q}")
    pl.add_argument("--tol", type=float, **({} if suppress else {"default": 1e-4}))
    pl.add_argument("--restarts", type=int, **({} if suppress else {"default": 10}))
    pl.add_argument("--csv-dir", help="directory for per-stage CSV functions")
    cv = asub.add_parser("cover", parents=[common], **kw)
    cv.add_argument("--eps", type=float, required=not suppress)
    cv.add_argument("--r", type=float, required=not suppress)
    cv.add_argument("--n", type=int, **({} if suppress else {"default": 1}))
    cv.add_argument("--omega", type=float, **({} if suppress else {"default": 1.001}))
    cv.add_argument("--gammas", type=float, nargs=3, **({} if suppress else {"default": [1 / 3, 1 / 3, 1 / 3]}))
    cv.add_argument("--eps-bar", type=float)
    cv.add_argument("--compat", action="store_true", help="allow omega <= 1")
    cv.add_argument("--target", help="CSV function to quantize onto the cover")
    cv.add_argument("--quantized-out", help="CSV path for the quantized function")
    cv.add_argument("--tol", type=float, **({} if suppress else {"default": 1e-4}))
    for parent, name in ((asub, "pack"), (sub, "pack")):
        pk = parent.add_parser(name, parents=[common], **kw)
        pk.add_argument("--rho", type=float, required=not suppress)
        pk.add_argument("--eps", type=float, required=not suppress)
        pk.add_argument("--n", type=int, **({} if suppress else {"default": 1}))
        pk.add_argument("--verify", action="store_true")
        pk.add_argument("--max-members", type=int, **({} if suppress else {"default": 10**6}))

    e = sub.add_parser("estimate", parents=[common], help="SAA estimate from a sample", **kw)
    e.add_argument("--objective", required=not suppress, help="mle, ls or lsd")
    e.add_argument("--data", required=not suppress, help="CSV with columns x1..xn[,y]")
    e.add_argument("--class", dest="fclass", required=not suppress, help="JSON function class")
    e.add_argument("--fhat", help="CSV path for the estimate")
    e.add_argument("--max-iter", type=int, **({} if suppress else {"default": 2000}))
    e.add_argument("--step", type=float, nargs=2, **({} if suppress else {"default": [1.0, 0.1]}))

    c = sub.add_parser("confidence", parents=[common], help="level-set membership of a candidate", **kw)
    c.add_argument("--objective", required=not suppress)
    c.add_argument("--data", required=not suppress)
    c.add_argument("--f", required=not suppress)
    c.add_argument("--delta", type=float, required=not suppress)
    c.add_argument("--c", type=float, help="scale for the confidence radius")

    r = sub.add_parser("rate", parents=[common], help="convergence-rate experiment", **kw)
    r.add_argument("--nus", type=int, nargs="+")
    r.add_argument("--replications", type=int)
    r.add_argument("--csv", help="per-nu CSV path (default: next to --out)")
    return p


_REQUIRED = {
    "dist": ("f", "g"),
    "approx pipeline": ("target", "schedule", "seed"),
    "approx cover": ("eps", "r"),
    "approx pack": ("rho", "eps"),
    "pack": ("rho", "eps"),
    "estimate": ("objective", "data", "fclass"),
    "confidence": ("objective", "data", "f", "delta"),
    "rate": ("seed",),
}


def _command_name(ns) -> str:
    return ns.command + (f" {ns.approx_command}" if ns.command == "approx" else "")


def parse(argv) -> argparse.Namespace:
    """Parse flags, then fill anything not given explicitly from --config."""
    explicit = vars(_parser(suppress=True).parse_args(argv))
    cfg = {}
    if explicit.get("config"):
        cfg = load_json(explicit["config"])
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
    out = vars(_defaults_for(argv))
    for k, v in cfg.items():
        key = k.replace("-", "_")
        if key == "class":
            key = "fclass"
        out[key] = v
    out.update(explicit)
    ns = argparse.Namespace(**out)
    missing = [k for k in _REQUIRED[_command_name(ns)] if out.get(k) is None]
    if missing:
        raise ValidationError(f"missing required parameters: {', '.join(missing)}")
    return ns


def _defaults_for(argv) -> argparse.Namespace:
    """Defaults of the chosen subcommand without enforcing required flags."""
    p = _parser(suppress=False)
    # required flags may come from --config, so relax them here
    for action in _walk_actions(p):
        action.required = False
    return p.parse_args(argv)


def _walk_actions(p):
    for a in p._actions:
        yield a
        if isinstance(a, argparse._SubParsersAction):
            for sp in a.choices.values():
                yield from _walk_actions(sp)


# ------------------------------------------------------------------ helpers


def _read_fn(path) -> GridFn:
    if not Path(path).exists():
        raise FormatError(f"{path}: no such file")
    return gridfn_from_csv(path)


def _read_sample(path, domain: GridDomain, regression: bool) -> Sample:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise FormatError(f"{path}: line 1: empty file")
    header = [h.strip() for h in rows[0]]
    n = domain.dim
    want = [f"x{i + 1}" for i in range(n)] + (["y"] if regression else [])
    if header != want:
        raise FormatError(f"{path}: line 1: header must be {','.join(want)}; got {','.join(header)}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(want):
            raise FormatError(f"{path}: line {lineno}: expected {len(want)} fields, got {len(row)}")
        vals = []
        for name, tok in zip(want, row):
            try:
                v = float(tok)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}, field {name!r}: cannot parse {tok!r}") from None
            if not math.isfinite(v):
                raise FormatError(f"{path}: line {lineno}, field {name!r}: value must be finite")
            vals.append(v)
        data.append(vals)
    if not data:
        raise FormatError(f"{path}: no data rows")
    A = np.array(data)
    return Sample.from_points(domain, A[:, :n], A[:, n] if regression else None)


def _read_class(spec) -> FunctionClass:
    d = load_json(spec) if isinstance(spec, (str, Path)) else spec
    try:
        dom = GridDomain.from_dict(d["domain"])
        return FunctionClass(
            dom,
            d.get("lower", -np.inf) if d.get("lower") is not None else -np.inf,
            d.get("upper", np.inf) if d.get("upper") is not None else np.inf,
            d.get("kappa"),
            bool(d.get("unit_integral", False)),
            d.get("anchor"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"class specification: missing or invalid field {exc}") from None


def _threads(ns) -> int | None:
    t = getattr(ns, "threads", None)
    if t is None and os.environ.get("HYPOLIB_THREADS"):
        try:
            t = int(os.environ["HYPOLIB_THREADS"])
        except ValueError:
            raise ValidationError("HYPOLIB_THREADS must be an integer") from None
    if t is not None and t < 1:
        raise ValidationError("threads must be positive")
    return t


def _seed(ns) -> int:
    return 0 if getattr(ns, "seed", None) is None else int(ns.seed)


# ------------------------------------------------------------------ commands
# Each command validates inputs and returns a zero-argument callable doing the
# actual work, so the two failure classes map to distinct exit codes.


def _cmd_dist(ns):
    f, g = _read_fn(ns.f), _read_fn(ns.g)
    if not f.domain.same_as(g.domain):
        raise ValidationError("f and g are sampled on different grids")
    if not ns.tol > 0:
        raise ValidationError("tol must be positive")
    inputs = {"f": str(ns.f), "g": str(ns.g)}
    params = {"tol": ns.tol, "rho": getattr(ns, "rho", None)}

    def run():
        pair = HypoPair(f, g)
        res = pair.distance(ns.tol).to_dict()
        if params["rho"] is not None:
            res["dl_rho"] = pair.rho_distance(params["rho"])
            res["dhat_rho"] = dhat_rho(f, g, params["rho"])
        return res

    return inputs, params, run


def _cmd_pipeline(ns):
    f = _read_fn(ns.target)
    sched = ns.schedule
    raw = load_json(sched) if isinstance(sched, (str, Path)) else sched
    try:
        schedule = PipelineSchedule(tuple(raw["stages"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"schedule: {exc}") from None
    params = {"schedule": schedule.to_dict(), "tol": ns.tol, "restarts": ns.restarts}
    inputs = {"target": str(ns.target), "schedule": str(sched) if isinstance(sched, (str, Path)) else "inline"}

    def run():
        stages = hypo_approx_sequence(f, schedule, ns.tol, restarts=ns.restarts, seed=_seed(ns))
        out = []
        for k, (phi, d) in enumerate(stages):
            row = {"stage": k + 1, "dl_to_target": d, "fit_objective": phi.fit_result.objective, "padiff": phi.to_dict()}
            if getattr(ns, "csv_dir", None):
                Path(ns.csv_dir).mkdir(parents=True, exist_ok=True)
                path = Path(ns.csv_dir) / f"stage_{k + 1}.csv"
                gridfn_to_csv(pa_to_gridfn(phi, f.domain), path)
                row["csv"] = str(path)
            out.append(row)
        return {"stages": out, "dl_to_target": [r["dl_to_target"] for r in out]}

    return inputs, params, run


def _cmd_cover(ns):
    params = {
        "eps": ns.eps, "r": ns.r, "n": ns.n, "omega": ns.omega, "gammas": list(ns.gammas),
        "eps_bar": getattr(ns, "eps_bar", None), "compat": bool(getattr(ns, "compat", False)),
    }
    p = cover_params(ns.eps, ns.r, tuple(ns.gammas), ns.omega, ns.n, params["eps_bar"], params["compat"])
    f = _read_fn(ns.target) if getattr(ns, "target", None) else None
    inputs = {"target": str(ns.target)} if f is not None else {}
    if f is not None:
        params["tol"] = ns.tol

    def run():
        res = p.to_dict()
        if f is not None:
            from .metric import dl

            f0 = quantize_to_cover(f, p)
            res["dl_to_quantized"] = dl(f, f0, ns.tol).value
            if getattr(ns, "quantized_out", None):
                gridfn_to_csv(f0, ns.quantized_out)
                res["quantized_csv"] = str(ns.quantized_out)
        return res

    return inputs, params, run


def _cmd_pack(ns):
    params = {"rho": ns.rho, "eps": ns.eps, "n": ns.n, "verify": bool(getattr(ns, "verify", False)), "max_members": ns.max_members}
    fam = packing_family(ns.rho, ns.eps, ns.n, ns.max_members)

    def run():
        res = {"members": fam.count, "nu": fam.nu, "log_members": math.log(fam.count), "log_lower_bound": fam.log_lower_bound()}
        if params["verify"]:
            res.update(verify_packing_separation(fam))
        return res

    return {}, params, run


def _cmd_estimate(ns):
    # "--out fhat.csv" names the estimate itself; the report then goes to stdout
    out = getattr(ns, "out", None)
    if out and str(out).lower().endswith(".csv") and not getattr(ns, "fhat", None):
        ns.fhat, ns.out = out, None
    obj = Objective(ns.objective)
    C = _read_class(ns.fclass)
    s = _read_sample(ns.data, C.domain, obj.kind == "ls_regression")
    params = {"objective": obj.kind, "class": C.to_dict(), "max_iter": ns.max_iter, "step": list(ns.step)}
    inputs = {"data": str(ns.data), "class": str(ns.fclass) if isinstance(ns.fclass, (str, Path)) else "inline"}

    def run():
        res = saa_solve(obj, s, C, ns.max_iter, tuple(ns.step), seed=_seed(ns), return_result=True)
        out = {"objective_value": res.objective, "iterations": res.iterations, "sample_size": len(s)}
        if getattr(ns, "fhat", None):
            gridfn_to_csv(res.f, ns.fhat)
            out["fhat"] = str(ns.fhat)
        else:
            out["values"] = res.f.values.tolist()
        return out

    return inputs, params, run


def _cmd_confidence(ns):
    obj = Objective(ns.objective)
    f = _read_fn(ns.f)
    s = _read_sample(ns.data, f.domain, obj.kind == "ls_regression")
    params = {"objective": obj.kind, "delta": ns.delta, "c": getattr(ns, "c", None)}
    inputs = {"data": str(ns.data), "f": str(ns.f)}

    def run():
        val = sample_average(obj, s, f)
        res = {"sample_average": val, "member": level_set_member(obj, s, f, ns.delta), "sample_size": len(s)}
        if params["c"] is not None and len(s) >= 2:
            res["radius"] = confidence_radius(len(s), f.domain.dim, params["c"])
        return res

    return inputs, params, run


def _truth_from(spec: dict, domain: GridDomain) -> Truth:
    kind = spec.get("kind")
    if "f0" in spec:
        f0 = _read_fn(spec["f0"]) if isinstance(spec["f0"], str) else GridFn(domain, spec["f0"])
    elif "constant" in spec:
        f0 = GridFn.constant(domain, float(spec["constant"]))
    else:
        raise ValidationError("truth needs 'f0' (CSV path or values) or 'constant'")
    if kind == "regression":
        return Truth.regression(f0, spec.get("x_probs"), spec.get("noise", (-1.0, 1.0)), spec.get("noise_probs"))
    if kind == "density":
        return Truth.density(f0)
    raise ValidationError("truth kind must be 'regression' or 'density'")


def _cmd_rate(ns):
    cfg = vars(ns)
    for key in ("objective", "truth", "fclass", "nus"):
        if cfg.get(key) is None:
            raise ValidationError(f"rate config needs '{'class' if key == 'fclass' else key}'")
    obj = Objective(cfg["objective"])
    C = _read_class(cfg["fclass"])
    truth = _truth_from(cfg["truth"], C.domain)
    nus = [int(v) for v in cfg["nus"]]
    if min(nus) < 2:
        raise ValidationError("every nu must be at least 2")
    reps = int(cfg.get("replications") or 50)
    params = {"objective": obj.kind, "class": C.to_dict(), "truth": cfg["truth"], "nus": nus, "replications": reps}
    spec = cfg.get("rate_spec")
    if spec is not None:
        params["rate_spec"] = spec
        rs = RateSpec(**spec)

    def run():
        rep = rate_experiment(obj, truth, C, nus, reps, seed=_seed(ns), solver_opts=cfg.get("solver"))
        rows = [{k: v for k, v in r.items() if k not in ("gaps", "dl")} for r in rep["per_nu"]]
        if spec is not None:
            for r in rows:
                r["r_nu"] = rate_r_nu(r["nu"], rs)
        path = getattr(ns, "csv", None) or (str(Path(ns.out).with_suffix("")) + "_per_nu.csv" if getattr(ns, "out", None) else None)
        if path:
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
        return {"slope": rep["slope"], "population_value": rep["population_value"], "per_nu": rows, "csv": path}

    return {"config": str(ns.config) if getattr(ns, "config", None) else None}, params, run


_COMMANDS = {
    "dist": _cmd_dist,
    "approx pipeline": _cmd_pipeline,
    "approx cover": _cmd_cover,
    "approx pack": _cmd_pack,
    "pack": _cmd_pack,
    "estimate": _cmd_estimate,
    "confidence": _cmd_confidence,
    "rate": _cmd_rate,
}


def run(argv=None, stdout=None) -> int:
    """Entry point returning the exit code."""
    stdout = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse(argv)
        name = _command_name(ns)
        threads = _threads(ns)
        inputs, params, work = _COMMANDS[name](ns)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INVALID
    except (FormatError, ValidationError, DomainError, ValueError, KeyError, TypeError) as exc:
        print(f"hypolib: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            results = work()
    except Exception as exc:  # noqa: BLE001 - any failure here is a computation error
        print(f"hypolib: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    report = {
        "schema": SCHEMA,
        "command": name,
        "inputs": inputs,
        "parameters": params,
        "results": results,
        "version": __version__,
        "seed": _seed(ns),
    }
    text = dump_json(report)
    if getattr(ns, "out", None):
        Path(ns.out).write_text(text)
    else:
        stdout.write(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

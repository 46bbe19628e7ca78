"""Command-line front end: JSON manifests in, report.json, CSV tables and field dumps out.

Exit codes: 0 every assertion passed, 1 some assertion failed, 2 invalid
manifest or arguments, 3 run aborted (a partial report is still written).
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import logging
import math
import sys
import time
import traceback
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import corpus
from . import experiments as X
from .grid import (Grid2D, ScalarField, cells_within, dump_scalar, dump_vector, lattice_tests, load_scalar,
                   load_vector)
from .imcf import Tolerances, bump_competitors, certify
from .plaplace import DirichletProblem, interior_sup_gradient_check, stage_csv, sweep
from .streamlines import write_paths

log = logging.getLogger("imcflab")

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_ABORTED = 0, 1, 2, 3
KINDS = ("prop1", "lemma42", "theorem2", "certify", "solve", "trace")
MEMBERS = ("linear", "angle", "aronsson43", "circle")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "member": {"enum": list(MEMBERS)},
        "fields": {
            "type": "object", "additionalProperties": False,
            "properties": {"u": {"type": "string"}, "w": {"type": "string"}, "F": {"type": "string"}},
        },
        "grid": {
            "type": "object", "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 9, "maximum": 513},
                           "h": {"type": "array", "items": _pos, "minItems": 1}},
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {"p_values": {"type": "array", "items": _num, "minItems": 1},
                           "tol": _pos, "max_iters": {"type": "integer", "minimum": 1}},
        },
        "sweep": {
            "type": "object", "additionalProperties": False,
            "properties": {"q_values": {"type": "array", "items": _pos, "minItems": 1}},
        },
        "params": {
            "type": "object", "additionalProperties": False,
            "properties": {"delta": _num, "sigma": _num, "gamma": _num, "rho": _pos},
        },
        "region": {"enum": ["full", "quadrant"]},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"tol_F": _pos, "c_align": _pos, "c_div": _pos, "tol_HI": _pos},
        },
        "competitors": {"type": "integer", "minimum": 0},
        "dump": {"type": "array", "items": {"enum": ["u", "v", "w", "F", "paths"]}},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    },
}


class ManifestError(ValueError):
    """Validation failure; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(manifest: Any, base: Path | None = None) -> dict:
    """Schema, range and file checks; returns the manifest with defaults filled in."""
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(manifest), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise ManifestError(_pointer(e.absolute_path), e.message)
    m = copy.deepcopy(manifest)
    prm = m.setdefault("params", {})
    delta = prm.setdefault("delta", 0.05)
    if not 0 < delta < 1 / 16:
        raise ManifestError("/params/delta", f"{delta} is not in the range delta in (0, 1/16)")
    sigma = prm.setdefault("sigma", 0.5)
    if not 0.5 <= sigma < 1 - 8 * delta:
        raise ManifestError("/params/sigma",
                            f"{sigma} is not in the range sigma in [1/2, 1 - 8 delta) = [0.5, {1 - 8 * delta:g})")
    gamma = prm.setdefault("gamma", 0.5)
    if not 0 < gamma < 1 - delta:
        raise ManifestError("/params/gamma",
                            f"{gamma} is not in the range gamma in (0, 1 - delta) = (0, {1 - delta:g})")
    for k, p in enumerate(m.get("solver", {}).get("p_values", [])):
        if not p > 1:
            raise ManifestError(f"/solver/p_values/{k}", f"{p} is not an exponent > 1")
    base = base or Path.cwd()
    for key, path in m.get("fields", {}).items():
        full = (base / path) if not Path(path).is_absolute() else Path(path)
        if not full.is_file():
            raise ManifestError(f"/fields/{key}", f"file not found: {path}")
        m["fields"][key] = str(full)
    kind = m["experiment"]
    fields = m.get("fields", {})
    if "member" not in m and not fields:
        m["member"] = {"prop1": "linear", "lemma42": "angle", "theorem2": "aronsson43", "certify": "circle",
                       "solve": "angle", "trace": "angle"}[kind]
    member = m.get("member")
    allowed = {"prop1": {"linear", "angle", "aronsson43"}, "lemma42": {"linear", "angle", "aronsson43"},
               "theorem2": {"aronsson43"}, "certify": set(MEMBERS), "solve": {"linear", "angle", "aronsson43"},
               "trace": {"angle", "aronsson43"}}[kind]
    if member is not None and member not in allowed:
        raise ManifestError("/member", f"{member!r} is not supported by {kind}; use one of {sorted(allowed)}")
    if kind == "certify" and fields and not {"w", "F"} <= set(fields):
        raise ManifestError("/fields", "certify on external fields needs both 'w' and 'F'")
    if kind == "solve" and fields and "u" not in fields:
        raise ManifestError("/fields", "solve on an external field needs 'u' (Dirichlet data)")
    if kind in ("prop1", "lemma42", "theorem2", "trace") and fields:
        raise ManifestError("/fields", f"{kind} runs on corpus members only")
    m.setdefault("seed", 0)
    m.setdefault("dump", [])
    return m


def load_manifest(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError("", f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate(data, path.parent)


# ------------------------------------------------------------------ runners


def _p_values(m: dict, default) -> list[float]:
    return [float(p) for p in m.get("solver", {}).get("p_values", default)]


def _tolerances(m: dict) -> Tolerances:
    return Tolerances(**m.get("tolerances", {}))


def _hs(m: dict, default) -> list[float]:
    return [float(h) for h in m.get("grid", {}).get("h", default)]


def _prop1_params(m: dict) -> X.Prop1Params:
    member = m["member"]
    default_p = (2, 4, 8, 16) if member == "linear" else (8, 16, 32, 64)
    prm = m["params"]
    kw = dict(p_values=_p_values(m, default_p), n=m.get("grid", {}).get("n", 65), delta=prm["delta"],
              sigma=prm["sigma"], gamma=prm["gamma"], tol=_tolerances(m))
    if "rho" in prm:
        kw["rho"] = prm["rho"]
    return X.Prop1Params(**kw)


def _dump_pair(out: Path, m: dict, res, tr, pair=None) -> list[str]:
    written = []
    if "u" in m["dump"]:
        dump_scalar(res.u, out / "u.csv")
        written.append("u.csv")
    if "v" in m["dump"] and pair is not None:
        dump_scalar(ScalarField(pair.u.grid, pair.v_scaled.values), out / "v_scaled.csv")
        written.append("v_scaled.csv")
    if "w" in m["dump"] and tr is not None:
        dump_scalar(ScalarField(tr.w.grid, np.where(tr.defined, tr.w.values, 0.0)), out / "w.csv")
        written.append("w.csv")
    if "F" in m["dump"] and tr is not None:
        dump_vector(tr.F, out / "F.csv")
        written.append("F.csv")
    return written


def run_prop1(m: dict, out: Path) -> dict:
    sol = X.prop1_member(m["member"])
    rep = X.run_prop1(sol, _prop1_params(m))
    (out / "stages.csv").write_text(rep.pop("stages_csv"))
    f = rep["_fields"]
    p = max(f["results"])
    from .conjugate import conjugate
    res = f["results"][p]
    pair = conjugate(res.u, p, m["params"]["gamma"], (-0.75, 0.0), omega=-1, epsilon=res.epsilon,
                     cell_mask=f["slab"].cell_mask) if "v" in m["dump"] else None
    rep["dumps"] = _dump_pair(out, m, res, f["transformed"][p], pair)
    return rep


def run_curve_bracket(m: dict, out: Path) -> dict:
    sol = X.prop1_member(m["member"])
    params = _prop1_params(m)
    pre = X.run_prop1(sol, params)
    (out / "stages.csv").write_text(pre.pop("stages_csv"))
    rep = X.run_curve_bracket(sol, params.p_values, fields=pre["_fields"])
    rep["prop1_checks"] = pre["checks"]
    return rep


def run_theorem2(m: dict, out: Path) -> dict:
    q = m.get("sweep", {}).get("q_values", (2, 4, 8))
    rep = X.run_theorem2(corpus.aronsson43(), _hs(m, (1 / 32, 1 / 64, 1 / 128)), q)
    with open(out / "seminorms.csv", "w") as fh:
        fh.write("box,q,h,value\n")
        for box, tab in rep["table"].items():
            for qk, row in tab.items():
                for h, v in zip(rep["h"], row["values"]):
                    fh.write(f"{box},{qk},{h:.17g},{v:.17g}\n")
    return rep


def _member_pair(m: dict, h: float):
    """(w, F, cell mask, tests, K for competitors) for a certify run."""
    member, region = m.get("member"), m.get("region", "full")
    if member == "circle":
        w, F, mask = X.circle_pair(h)
        return w, F, mask, X.circle_tests(w.grid), X.annulus_mask(w.grid, 0.6, 1.9)
    if member == "aronsson43":
        w, F = X.aronsson_pair(h)
        grid = w.grid
        Xc, Yc = grid.centers()
        if region == "quadrant":
            mask = (Xc > 0) & (Yc > 0)
            return w, F, mask, X.quadrant_tests(grid, 1, 1), (Xc > 0.2) & (Xc < 0.9) & (Yc > 0.2) & (Yc < 0.9)
        tests = lattice_tests(grid, 0.25, 0.25, prefix="full") + X.axis_tests()
        return w, F, None, tests, (np.abs(Xc) < 0.9) & (np.abs(Yc) < 0.9)
    sol = corpus.member(member)
    if member == "angle":
        n = int(round(1 / h)) + 1
        grid = Grid2D.square(0.375, 1.375, n)
    else:
        grid = Grid2D.square(-1.0, 1.0, int(round(2 / h)) + 1)
    Xn, Yn = grid.nodes()
    w = ScalarField(grid, sol.exact_w(Xn, Yn))
    tests = lattice_tests(grid, 0.1 if member == "angle" else 0.25, 0.1 if member == "angle" else 0.25,
                          prefix=member)
    Xc, Yc = grid.centers()
    lo, hi = grid.x0 + 0.1, grid.x1 - 0.1
    K = (Xc > lo) & (Xc < hi) & (Yc > grid.y0 + 0.1) & (Yc < grid.y1 - 0.1)
    return w, X._limit_flux(sol, grid), None, tests, K


def run_certify(m: dict, out: Path) -> dict:
    tol = _tolerances(m)
    ncomp = m.get("competitors", 0)
    if "fields" in m and m["fields"]:
        w = load_scalar(m["fields"]["w"])
        F = load_vector(m["fields"]["F"])
        grid = w.grid
        tests = lattice_tests(grid, 0.25 * min(grid.x1 - grid.x0, grid.y1 - grid.y0) / 2,
                              prefix="ext")
        mask, K = None, np.ones(grid.cell_shape, dtype=bool)
        source = {"w": Path(m["fields"]["w"]).name, "F": Path(m["fields"]["F"]).name}
    else:
        h = _hs(m, (1 / 128,))[-1]
        w, F, mask, tests, K = _member_pair(m, h)
        source = {"member": m["member"], "region": m.get("region", "full"), "h": h}
    comps = bump_competitors(w, K, ncomp, m["seed"]) if ncomp else ()
    cert = certify(w, F, tests, tol, mask=mask, competitors=comps, K=K if ncomp else None)
    with open(out / "weak_div.csv", "w") as fh:
        fh.write("test,residual\n")
        for k, r in cert.weak_div_residuals:
            fh.write(f"\"{k}\",{r:.17g}\n")
    if "w" in m["dump"]:
        dump_scalar(w, out / "w.csv")
    if "F" in m["dump"]:
        dump_vector(F, out / "F.csv")
    return {"experiment": "certify", "source": source, "seed": m["seed"], "competitors": ncomp,
            "certificate": cert.to_dict(), "checks": dict(cert.checks)}


def _solve_problem(m: dict) -> tuple[DirichletProblem, str]:
    if m.get("fields"):
        u0 = load_scalar(m["fields"]["u"])
        return DirichletProblem(u0.grid, u0.values, ~u0.grid.boundary_mask()), Path(m["fields"]["u"]).name
    member = m["member"]
    n = m.get("grid", {}).get("n", 65 if member == "linear" else 129)
    if member == "angle":
        return X.angle_square(n)[1], "angle on [3/8, 11/8]^2"
    if member == "aronsson43":
        grid = Grid2D.square(0.25, 1.25, n)
        Xn, Yn = grid.nodes()
        return DirichletProblem(grid, corpus.aronsson43().value(Xn, Yn), ~grid.boundary_mask()), \
            "aronsson43 on [1/4, 5/4]^2"
    grid = Grid2D.square(-1.0, 1.0, n)
    Xn, Yn = grid.nodes()
    return DirichletProblem(grid, corpus.linear().value(Xn, Yn), ~grid.boundary_mask()), "linear on [-1, 1]^2"


def run_solve(m: dict, out: Path) -> dict:
    problem, source = _solve_problem(m)
    s = m.get("solver", {})
    results = sweep(problem, _p_values(m, (2, 4, 8, 16)), tol=s.get("tol", 1e-9), max_iters=s.get("max_iters", 200))
    (out / "stages.csv").write_text(stage_csv(list(results.values())))
    rho = m["params"].get("rho", 0.1)
    rows = []
    for p, r in results.items():
        lhs, rhs = interior_sup_gradient_check(r, rho, p, X.GRAD_BOUND_C)
        rows.append({"p": p, "converged": r.converged, "iterations": r.iterations, "residual": r.residual,
                     "energy": r.energy, "interior_sup_grad": lhs, "grad_bound_rhs": rhs})
    last = results[max(results)]
    if "u" in m["dump"]:
        dump_scalar(last.u, out / "u.csv")
    return {"experiment": "solve", "source": source, "rows": rows,
            "checks": {"converged": all(r["converged"] for r in rows),
                       "grad_bound": all(r["interior_sup_grad"] <= r["grad_bound_rhs"] for r in rows)}}


def run_trace(m: dict, out: Path) -> dict:
    h = _hs(m, (1 / 128,))[-1]
    rep = X.streamline_constancy(m["member"], h)
    paths = rep.pop("_paths")
    write_paths(out / "paths.csv", paths)
    if m["member"] == "angle":
        sw = X.run_angle_sweep(p_values=_p_values(m, (8, 16, 32, 64)))
        p = max(sw["_fields"]["results"])
        agree = X.levelset_streamline_agreement(sw["_fields"]["transformed"][p], sw["_fields"]["results"][p].u,
                                                [(0.7, 0.7), (1.0, 0.6), (0.6, 1.0)])
        rep["levelset_agreement"] = dict(agree, p=p)
        rep["checks"]["levelset_within_2h"] = agree["checks"]["within_2h"]
    return rep


RUNNERS = {"prop1": run_prop1, "lemma42": run_curve_bracket, "theorem2": run_theorem2, "certify": run_certify,
           "solve": run_solve, "trace": run_trace}


# ------------------------------------------------------------------ driver


def _finalise(rep: dict) -> dict:
    rep = X.strip_private(rep)
    rep.pop("seconds", None)
    rep.pop("stages_csv", None)
    return rep


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _sanitize(o):
    """Non-finite floats become strings so the report stays strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {str(k): _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    return o


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_sanitize(data), sort_keys=True, indent=2, default=_json_default) + "\n")


def execute(m: dict, out: Path) -> int:
    """Run one validated manifest into ``out``; returns the exit code."""
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(m["seed"] % 2 ** 32)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    report: dict = {"manifest": m, "aborted": False}
    try:
        rep = _finalise(RUNNERS[m["experiment"]](m, out))
        report.update(rep)
        report["passed"] = all(rep["checks"].values())
        code = EXIT_OK if report["passed"] else EXIT_FAIL
    except Exception as exc:  # noqa: BLE001 - any runtime failure becomes an aborted report
        log.debug("aborted", exc_info=True)
        report.update({"aborted": True, "passed": False, "error": f"{type(exc).__name__}: {exc}"})
        (out / "traceback.txt").write_text(traceback.format_exc())
        code = EXIT_ABORTED
    write_json(out / "report.json", report)
    write_json(out / "timing.json", {"started": started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                                     "seconds": time.perf_counter() - t0})
    return code


def _apply_flags(m: dict, args) -> dict:
    m = copy.deepcopy(m)
    if args.seed is not None:
        m["seed"] = args.seed
    if args.grid is not None:
        g = m.setdefault("grid", {})
        if m["experiment"] in ("certify", "theorem2", "trace"):
            g["h"] = [1.0 / (args.grid - 1)]
        else:
            g["n"] = args.grid
    if args.p_max is not None:
        s = m.setdefault("solver", {})
        default = (2, 4, 8, 16) if m.get("member") == "linear" or m["experiment"] == "solve" else (8, 16, 32, 64)
        ps = [p for p in s.get("p_values", default) if p <= args.p_max]
        if not ps:
            raise ManifestError("/solver/p_values", f"no exponent <= --p-max {args.p_max}")
        s["p_values"] = ps
    return validate(m)


def battery() -> list[dict]:
    """Manifests covering every experiment kind, used by ``report`` without manifests."""
    return [
        {"experiment": "prop1", "member": "linear"},
        {"experiment": "prop1", "member": "angle"},
        {"experiment": "lemma42", "member": "angle"},
        {"experiment": "theorem2"},
        {"experiment": "certify", "member": "circle", "competitors": 50},
        {"experiment": "certify", "member": "aronsson43", "region": "full"},
        {"experiment": "certify", "member": "aronsson43", "region": "quadrant", "competitors": 50},
        {"experiment": "solve", "member": "angle", "solver": {"p_values": [8, 16, 32, 64]}},
        {"experiment": "trace", "member": "angle"},
        {"experiment": "trace", "member": "aronsson43"},
    ]


def _label(m: dict) -> str:
    return "-".join(str(x) for x in (m["experiment"], m.get("member", "fields"), m.get("region")) if x)


def cmd_report(args) -> int:
    if args.manifest:
        manifests = [_apply_flags(load_manifest(Path(p)), args) for p in args.manifest]
    else:
        manifests = [_apply_flags(validate(m), args) for m in battery()]
    out = Path(args.out or "imcflab-report")
    summary = []
    worst = EXIT_OK
    for k, m in enumerate(manifests):
        name = f"{k:02d}-{_label(m)}"
        code = execute(m, out / name)
        rep = json.loads((out / name / "report.json").read_text())
        summary.append({"name": name, "exit": code, "passed": rep["passed"], "aborted": rep["aborted"],
                        "checks": rep.get("checks", {})})
        worst = max(worst, code)
        if not args.quiet:
            print(f"{'PASS' if code == EXIT_OK else 'FAIL'} {name}")
    write_json(out / "report.json", {"runs": summary, "passed": worst == EXIT_OK})
    return worst


def cmd_single(args) -> int:
    if args.manifest:
        m = load_manifest(Path(args.manifest[0]))
        if m["experiment"] != args.command:
            raise ManifestError("/experiment", f"manifest is a {m['experiment']!r} run, not {args.command!r}")
        if len(args.manifest) > 1:
            raise ManifestError("", f"{args.command} takes a single manifest")
    else:
        m = validate({"experiment": args.command})
    m = _apply_flags(m, args)
    out = Path(args.out or m.get("out") or f"imcflab-{args.command}")
    code = execute(m, out)
    if not args.quiet:
        rep = json.loads((out / "report.json").read_text())
        for k, v in sorted(rep.get("checks", {}).items()):
            print(f"{'PASS' if v else 'FAIL'} {k}")
        if rep["aborted"]:
            print(f"ABORTED {rep['error']}")
        print(f"report: {out / 'report.json'}")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="imcflab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*KINDS, "report"):
        sp = sub.add_parser(name, help=f"run the {name} experiment" if name != "report"
                            else "run several manifests (default: the built-in battery)")
        sp.add_argument("--manifest", action="append", help="JSON manifest (repeatable for report)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="seed for test placement and competitors")
        sp.add_argument("--grid", type=int, help="nodes per side (certify/theorem2/trace: h = 1/(N-1))")
        sp.add_argument("--p-max", type=float, help="drop exponents above this value")
        sp.add_argument("--quiet", action="store_true", help="no console output")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return cmd_report(args) if args.command == "report" else cmd_single(args)
    except ManifestError as exc:
        print(f"manifest error at {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

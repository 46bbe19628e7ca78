"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a one-line verdict that is printed in the pytest terminal
summary; running this file directly prints the same lines.
"""

from __future__ import annotations

import json

import pytest

from imcflab import cli
from imcflab import experiments as E

try:
    from conftest import ACCEPTANCE
except ImportError:  # run as a script
    ACCEPTANCE = {}


def record(k: int, ok: bool, msg: str) -> None:
    ACCEPTANCE[k] = (bool(ok), msg)
    print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")
    assert ok, msg


def test_criterion_01_linear_pipeline(prop1_linear):
    rep = prop1_linear
    sup_u = max(r["sup_u_error"] for r in rep["per_p"])
    w16 = next(r for r in rep["per_p"] if r["p"] == 16.0)["max_abs_w_Q"]
    cert = rep["certificate"]
    residuals = [abs(r) for _, r in cert["weak_div_residuals"]] + [cert["alignment_residual_L1"],
                                                                     max(cert["sup_F_norm"] - 1.0, 0.0)]
    ok = (sup_u <= 1e-8 and w16 <= 1e-2 and cert["verdict"] == "pass" and max(residuals) <= 1e-6
          and rep["seconds"] <= 30)
    record(1, ok, f"sup|u_p-u|={sup_u:.1e} (<=1e-8), max|w_16| on Q_1/4={w16:.3g} (<=1e-2), "
                  f"certificate {cert['verdict']} max residual={max(residuals):.1e} (<=1e-6), {rep['seconds']:.1f}s")


def test_criterion_02_angle_rate(angle_sweep):
    rep = angle_sweep
    ok = -1.3 <= rep["slope"] <= -0.7 and rep["seconds"] <= 300 and rep["checks"]["converged"]
    record(2, ok, f"slope={rep['slope']:.3f} in [-1.3, -0.7], {rep['seconds']:.1f}s")


def test_criterion_03_circle_certificate():
    rep = E.run_circle()
    ratios = ", ".join(f"{r:.3f}" for r in rep["ratios"])
    ok = rep["checks"]["all_pass"] and rep["checks"]["halves_within_30pct"]
    record(3, ok, f"verdicts={[r['verdict'] for r in rep['rows']]}, weak-div ratios per halving=[{ratios}] "
                  f"(required 0.5 +/- 30%)")


def test_criterion_04_aronsson_discrimination():
    rep = E.run_aronsson()
    c = rep["checks"]
    ok = all(c.values())
    axis = ", ".join(f"{r:.3f}" for r in rep["axis_ratios"])
    quad = ", ".join(f"{r:.3f}" for r in rep["quadrant_ratios"])
    record(4, ok, f"axis ratios=[{axis}] (>0.9), quadrant ratios=[{quad}] (0.5 +/- 30%), "
                  f"full={rep['rows'][-1]['full_verdict']}, quadrants pass={c['quadrants_pass']}")


def test_criterion_05_identities():
    rep = E.run_identities()
    ok = rep["order_eq4"] >= 0.8 and rep["order_eq5"] >= 0.8
    record(5, ok, f"orders eq4={rep['order_eq4']:.2f}, eq5={rep['order_eq5']:.2f} (>=0.8); "
                  f"c_eq4={rep['c_eq4']:.2g}, c_eq5={rep['c_eq5']:.2g}")


def test_criterion_06_gradient_bound_and_monotonicity(prop1_linear, prop1_angle, angle_sweep):
    solves = prop1_linear["per_p"] + angle_sweep["per_p"]
    grad_bound = all(r["interior_sup_grad"] <= r["grad_bound_rhs"] for r in solves)
    mono = min(r["min_d2u"] for r in prop1_linear["per_p"] + prop1_angle["per_p"])
    ok = grad_bound and mono >= 0.5 - 1e-2
    record(6, ok, f"interior gradient bound (C=100) on {len(solves)} solves: {grad_bound}; "
                  f"min d2u on slab problems={mono:.4f} (>=0.49)")


def test_criterion_07_seminorm_dichotomy():
    rep = E.run_theorem2()
    one = rep["table"]["one_sided"]["4"]["values"]
    stra = rep["table"]["straddling"]["4"]["ratios"]
    ok = rep["checks"]["one_sided_q4_within_2x"] and rep["checks"]["straddling_q4_doubles"]
    record(7, ok, f"one-sided q=4 max/min={max(one) / min(one):.3f} (<=2), straddling growth per refinement="
                  f"[{', '.join(f'{r:.3f}' for r in stra)}] (>=2)")


def test_criterion_08_streamlines(angle_sweep):
    var = {m: E.streamline_constancy(m)["max_relative_variation"] for m in ("angle", "aronsson43")}
    p = max(angle_sweep["_fields"]["results"])
    agree = E.levelset_streamline_agreement(angle_sweep["_fields"]["transformed"][p],
                                            angle_sweep["_fields"]["results"][p].u,
                                            [(0.7, 0.7), (1.0, 0.6), (0.6, 1.0)])
    ok = max(var.values()) <= 2e-3 and agree["checks"]["within_2h"]
    record(8, ok, f"relative variation angle={var['angle']:.1e}, aronsson={var['aronsson43']:.1e} (<=2e-3); "
                  f"Hausdorff(level set of w_{p:g}, streamline)={agree['max']:.1e} (<=2h={agree['bound']:.1e})")


def test_criterion_09_competitor_inequality():
    rep = E.run_hi(n_comp=50, seed=0)
    ok = all(rep["checks"].values())
    rows = ", ".join(f"{r['pair']}:{r['violations']}" for r in rep["rows"])
    record(9, ok, f"violations on certified pairs [{rows}], corrupted pair violations="
                  f"{rep['corrupted']['violations']} (>=1)")


def test_criterion_10_determinism(tmp_path):
    manifests = [
        {"experiment": "prop1", "member": "linear", "seed": 3},
        {"experiment": "certify", "member": "circle", "competitors": 20, "grid": {"h": [0.03125]}, "seed": 42},
        {"experiment": "theorem2", "seed": 1},
    ]
    same = []
    for k, m in enumerate(manifests):
        path = tmp_path / f"m{k}.json"
        path.write_text(json.dumps(m))
        blobs = []
        for rep in range(2):
            out = tmp_path / f"run{k}-{rep}"
            cli.main([m["experiment"], "--manifest", str(path), "--out", str(out), "--quiet"])
            blobs.append((out / "report.json").read_bytes())
        same.append(blobs[0] == blobs[1])
    record(10, all(same), f"byte-identical report.json for {sum(same)}/{len(same)} manifests")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))

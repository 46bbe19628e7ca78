import math

import numpy as np
import pytest

from imcflab import corpus
from imcflab import experiments as E


def test_slack_constant_is_the_linear_fit(prop1_linear):
    fitted = max(r["p"] * r["max_w_minus_wref_Q"] for r in prop1_linear["per_p"])
    assert math.ceil(fitted * 1000) / 1000 == pytest.approx(E.SLACK_C, abs=1e-3)


def test_prop1_linear(prop1_linear):
    rep = prop1_linear
    assert all(rep["checks"].values())
    assert rep["certificate"]["verdict"] == "pass"
    assert all(r["sup_u_error"] <= 1e-8 for r in rep["per_p"])
    assert [r["p"] for r in rep["per_p"]] == [2.0, 4.0, 8.0, 16.0]


def test_prop1_angle_structure(prop1_angle):
    rep = prop1_angle
    c = rep["checks"]
    assert c["converged"] and c["ii_L1_decreasing"] and c["iii_certificate"] and c["monotonicity"]
    assert c["grad_bound"] and c["anchor_normalisation"]
    assert all(math.isfinite(r["L1_w_minus_wref_Q"]) for r in rep["per_p"])
    # the linear-fitted slack is exceeded by a few percent up to p = 32 (ledger); the gap still shrinks
    assert all(r["max_w_minus_wref_Q"] <= 1.1 * r["slack"] for r in rep["per_p"] if r["p"] <= 32)
    gaps = [r["max_w_minus_wref_Q"] for r in rep["per_p"]]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_prop1_aronsson_member_normalised():
    s = E.prop1_member("aronsson43")
    assert np.allclose(s.gradient(0.0, 0.0), [0, 1])
    assert s.omega(0.0, 0.0) == -1


def test_curve_bracket_linear_brackets(prop1_linear):
    rep = E.run_curve_bracket(corpus.linear(), p_values=(8, 16, 32, 64), n=65)
    assert rep["upper_bound"] == pytest.approx(1.0) and rep["lower_bound"] == pytest.approx(1.0)
    last = rep["rows"][-1]
    assert abs(last["inf_minus_sup_root"] - 1) <= 5e-2 and abs(last["sup_minus_inf_root"] - 1) <= 5e-2
    assert all(rep["checks"].values())


def test_curve_bracket_angle(prop1_angle):
    rep = E.run_curve_bracket(corpus.normalized_angle(), fields=prop1_angle["_fields"])
    assert all(rep["checks"].values())
    assert rep["lower_bound"] <= rep["upper_bound"]


def test_curve_bracket_degenerate_curve_bounds_collapse(prop1_angle):
    sol = corpus.normalized_angle()
    rep = E.run_curve_bracket(sol, start=(0.0, 0.0), end=(1e-6, 0.0), rho=1 / 16, fields=prop1_angle["_fields"])
    g = float(sol.grad_norm(0.0, 0.0))
    assert rep["upper_bound"] == pytest.approx(g, rel=1e-6) and rep["lower_bound"] == pytest.approx(g, rel=1e-6)


def test_curve_bracket_rejects_disk_leaving_U(prop1_angle):
    with pytest.raises(ValueError, match="exits U"):
        E.run_curve_bracket(corpus.normalized_angle(), start=(0.0, 0.7), end=(0.5, 0.7), fields=prop1_angle["_fields"])


def test_curve_bracket_rejects_steep_curve(prop1_angle):
    with pytest.raises(ValueError, match="delta"):
        E.run_curve_bracket(corpus.normalized_angle(), start=(0.0, 0.0), end=(0.3, 0.3), fields=prop1_angle["_fields"])


def test_theorem2_linear_all_zero():
    rep = E.run_theorem2(corpus.linear())
    for box in rep["table"].values():
        for row in box.values():
            assert row["values"] == [0.0, 0.0, 0.0]
    assert not rep["checks"]["straddling_q4_doubles"]


def test_theorem2_aronsson_one_sided_bounded_straddling_grows():
    rep = E.run_theorem2()
    assert rep["checks"]["one_sided_q4_within_2x"]
    assert rep["orientation"]["defined_in_G"] and rep["orientation"]["defined_on_Gamma"] == 0.0
    r = rep["table"]["straddling"]["4"]["ratios"]
    # the 1D oracle: the truncated integral of |x|^{-4/3} grows like h^{-1/3}
    assert all(abs(x - 2 ** (1 / 3)) < 0.1 for x in r)


def test_gradient_convergence():
    rep = E.gradient_convergence()
    assert rep["checks"]["decreasing"]
    e = rep["errors"]
    assert all(0.4 < b / a < 0.6 for a, b in zip(e, e[1:]))


def test_identity_orders():
    rep = E.run_identities()
    assert rep["order_eq4"] >= 0.8 and rep["order_eq5"] >= 0.8


def test_strip_private_removes_live_objects(prop1_linear):
    clean = E.strip_private(prop1_linear)
    assert "_fields" not in clean and isinstance(clean["per_p"][0]["p"], float)

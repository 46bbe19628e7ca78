import json

import numpy as np
import pytest

from imcflab import corpus
from imcflab import experiments as E
from imcflab.grid import Grid2D, GridError, ScalarField, VectorField, lattice_tests
from imcflab.imcf import Tolerances, bump_competitors, certify, huisken_ilmanen_check, theorem1_identities


def test_constant_pair_passes():
    g = Grid2D.square(-1, 1, 33)
    w = ScalarField(g, np.full(g.shape, 0.7))
    F = VectorField(g, np.zeros((*g.cell_shape, 2)))
    c = certify(w, F, lattice_tests(g, 0.25, 0.25))
    assert c.passed and c.max_weak_div == 0 and c.alignment_residual_L1 == 0


def test_circle_pair_passes_and_serialises():
    w, F, m = E.circle_pair(1 / 32)
    c = certify(w, F, E.circle_tests(w.grid), mask=m)
    assert c.passed and c.verdict == "pass"
    d = json.loads(c.to_json())
    assert d["verdict"] == "pass" and d["failing_tests"] == []


def test_aronsson_full_square_fails_on_axes():
    w, F = E.aronsson_pair(1 / 64)
    c = certify(w, F, lattice_tests(w.grid, 0.25, 0.25) + E.axis_tests())
    assert not c.passed
    assert {"axis1@(-0.5,0)", "axis2@(0,0.5)"} <= set(c.failing_tests())


def test_certify_guards():
    w, F, m = E.circle_pair(1 / 16)
    with pytest.raises(ValueError, match="at least"):
        certify(w, F, E.circle_tests(w.grid)[:5], mask=m)
    with pytest.raises(GridError, match="outside the mask"):
        certify(w, F, lattice_tests(w.grid, 0.25, 0.25), mask=m)
    with pytest.raises(ValueError, match="competitors"):
        certify(w, F, E.circle_tests(w.grid), mask=m, competitors=[w])


def test_sup_F_violation_detected():
    w, F, m = E.circle_pair(1 / 32)
    c = certify(w, VectorField(F.grid, 1.1 * F.values), E.circle_tests(w.grid), mask=m)
    assert not c.checks["sup_F"]


def test_identities_linear_vanish():
    g = Grid2D.square(-1, 1, 33)
    s = corpus.sample(corpus.linear(), g)
    res = theorem1_identities(s.u, -1, s.grad_norm, lattice_tests(g, 0.25, 0.25))
    assert res.eq4_L1 == 0 and res.eq5_max == 0


def test_identities_angle_converge():
    out = []
    for n in (33, 65, 129):
        g = Grid2D.square(0.375, 1.375, n)
        s = corpus.sample(corpus.angle(), g)
        out.append(theorem1_identities(s.u, s.omega, s.grad_norm, lattice_tests(g, 0.2, 0.1)))
    assert out[2].eq4_L1 < out[1].eq4_L1 < out[0].eq4_L1
    assert out[2].eq5_max < out[1].eq5_max < out[0].eq5_max


def test_identities_aronsson_quadrant():
    out = []
    for n in (33, 65, 129):
        g = Grid2D.square(0.2, 1.0, n)
        s = corpus.sample(corpus.aronsson43(), g)
        out.append(theorem1_identities(s.u, 1, s.grad_norm, lattice_tests(g, 0.15, 0.1)))
    assert out[2].eq4_L1 < out[1].eq4_L1 < out[0].eq4_L1
    assert out[2].eq5_max < out[0].eq5_max


def test_identities_reject_critical_points():
    g = Grid2D.square(-1, 1, 17)
    u = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(ValueError, match="vanishes"):
        theorem1_identities(u, 1, u, lattice_tests(g, 0.25, 0.25))


def test_hi_identical_competitor():
    w, F, m = E.circle_pair(1 / 32)
    K = E.annulus_mask(w.grid, 0.6, 1.9)
    (label, lhs, rhs), = huisken_ilmanen_check(w, [("same", w)], K)
    assert lhs == rhs


def test_hi_circle_and_corrupted():
    w, F, m = E.circle_pair(1 / 64)
    K = E.annulus_mask(w.grid, 0.6, 1.9)
    pairs = huisken_ilmanen_check(w, bump_competitors(w, K, 50, seed=1), K)
    assert len(pairs) == 50 and all(a <= b + 1e-6 for _, a, b in pairs)
    wc, Fc = E.corrupted_pair(1 / 64)
    Kc = np.ones(wc.grid.cell_shape, dtype=bool)
    pairs = huisken_ilmanen_check(wc, bump_competitors(wc, Kc, 50, seed=0), Kc)
    assert any(a > b + 1e-6 for _, a, b in pairs)


def test_hi_rejects_competitor_changed_outside_K():
    w, F, m = E.circle_pair(1 / 16)
    K = E.annulus_mask(w.grid, 0.6, 1.9)
    bad = ScalarField(w.grid, w.values + 1.0)
    with pytest.raises(ValueError, match="outside K"):
        huisken_ilmanen_check(w, [bad], K)


def test_competitors_are_seeded():
    w, F, m = E.circle_pair(1 / 16)
    K = E.annulus_mask(w.grid, 0.6, 1.9)
    a = bump_competitors(w, K, 5, seed=3)
    b = bump_competitors(w, K, 5, seed=3)
    assert [x[0] for x in a] == [x[0] for x in b]
    assert all(np.array_equal(x[1].values, y[1].values) for x, y in zip(a, b))


def test_tolerances_scale_with_h():
    t = Tolerances()
    assert t.div(1 / 64) == pytest.approx(t.div(1 / 32) / 2, rel=1e-9)

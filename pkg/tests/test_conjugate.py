import math

import numpy as np
import pytest

from imcflab import corpus
from imcflab import experiments as E
from imcflab.conjugate import (ConjugateError, TransformedField, conjugate, duality_residual_L1, log_transform,
                               pprime_equation_residual)
from imcflab.grid import Grid2D, ScalarField, TestFunction, VectorField
from imcflab.plaplace import PExponent, sweep


def linear_u(n=65):
    g = Grid2D.square(-1, 1, n)
    return ScalarField(g, g.nodes()[1])


@pytest.mark.parametrize("p", [2, 4, 8, 16])
def test_linear_conjugate_closed_form(p):
    u = linear_u()
    pair = conjugate(u, p, 0.5, (-0.75, 0.0))
    X, Y = u.grid.nodes()
    exact = X + 0.75 + 0.5 ** (p - 1)
    v = pair.v.values
    assert np.abs(v - exact)[pair.valid].max() < 1e-12
    assert pair.value_at(-0.75, 0.0) == pytest.approx(0.5 ** (p - 1), rel=1e-9)
    assert pair.curl_residual < 1e-12
    assert duality_residual_L1(pair) < 1e-12


def test_p2_conjugate_of_conjugate_is_minus_u():
    u = linear_u(33)
    v = conjugate(u, 2, 0.5, (-0.75, 0.0)).v
    g = u.grid
    inner = Grid2D(g.x0 + g.h, g.y0 + g.h, g.h, g.nx - 2, g.ny - 2)  # v is valid off the boundary ring
    vv = conjugate(ScalarField(inner, v.values[1:-1, 1:-1]), 2, 0.5, (0.0, -0.75)).v
    u = ScalarField(inner, u.values[1:-1, 1:-1])
    d = (vv.values + u.values)[1:-1, 1:-1]
    assert np.ptp(d) < 1e-12


@pytest.fixture(scope="module")
def angle8():
    grid, problem = E.angle_square(129)
    return sweep(problem, [8])[8.0]


def test_angle_conjugate_closed_form(angle8):
    pair = conjugate(angle8.u, 8, 0.5, (1.3, 1.3), omega=-1, epsilon=angle8.epsilon)
    grid = angle8.u.grid
    X, Y = grid.nodes()
    exact = np.hypot(X, Y) ** (2 - 8) / (2 - 8)
    d = pair.v.values - exact
    i, j = grid.nearest_node(1.3, 1.3)
    d -= d[j, i]
    lo, hi = 0.375 + 1 / 16, 1.375 - 1 / 16
    interior = pair.valid & (X > lo) & (X < hi) & (Y > lo) & (Y < hi)
    assert np.abs(d / exact)[interior].max() <= 1e-3


def test_linear_log_transform():
    u = linear_u()
    pair = conjugate(u, 16, 0.5, (-0.75, 0.0))
    tr = log_transform(pair)
    i, j = u.grid.nearest_node(0.25, 0.0)
    expect = -math.log(1.0 + 0.5 ** 15) / 15
    assert tr.w.values[j, i] == pytest.approx(expect, rel=1e-9)
    assert expect == pytest.approx(-2.0e-6, rel=2e-2)
    # |F| = (p-1)^{-1/(p-1)} e^w |grad u| with e^w from the cell-averaged v
    vs = pair.v.values
    vc = 0.25 * (vs[:-1, :-1] + vs[:-1, 1:] + vs[1:, :-1] + vs[1:, 1:])
    cd = tr.cell_defined
    expect_F = 15 ** (-1 / 15) * vc[cd] ** (-1 / 15)
    assert np.allclose(tr.F.norm[cd], expect_F, rtol=1e-9)


def test_log_transform_fails_loudly_on_nonpositive_v():
    u = linear_u(33)
    pair = conjugate(u, 4, 0.5, (-0.75, 0.0))
    X, _ = u.grid.nodes()
    region = pair.valid & (X < -0.9)
    with pytest.raises(ConjugateError, match="v <= 0"):
        log_transform(pair, region=region)


def test_conjugate_rejects_bad_arguments():
    u = linear_u(17)
    with pytest.raises(ValueError):
        conjugate(u, 4, 1.5)
    with pytest.raises(ValueError):
        conjugate(u, 4, 0.5, omega=0)
    with pytest.raises(ConjugateError):
        conjugate(u, 4, 0.5, anchor=(5.0, 0.0))


def _exact_transformed(n, corrupt=0.0, p=8):
    g = Grid2D.square(0.5, 1.5, n)
    X, Y = g.nodes()
    w = (2 - p) / (1 - p) * np.log(np.hypot(X, Y)) + corrupt * X ** 2
    ones = np.ones(g.shape, dtype=bool)
    return TransformedField(ScalarField(g, w), VectorField(g, np.zeros((*g.cell_shape, 2))), PExponent.of(p),
                            ones, np.ones(g.cell_shape, dtype=bool))


TESTS = [TestFunction((1.0, 1.0), 0.3), TestFunction((0.9, 1.1), 0.2)]


def test_pprime_residual_constant_w():
    t = _exact_transformed(33)
    t.w.values[:] = 1.5
    assert all(r == 0 for r in pprime_equation_residual(t, TESTS))


def test_pprime_residual_exact_and_corrupted():
    exact = [max(map(abs, pprime_equation_residual(_exact_transformed(n), TESTS))) for n in (33, 65, 129)]
    assert exact[1] < exact[0] and exact[2] < exact[1] and exact[2] < 1e-4
    bad = [max(map(abs, pprime_equation_residual(_exact_transformed(n, 0.1), TESTS))) for n in (33, 65, 129)]
    assert min(bad) > 1e-2

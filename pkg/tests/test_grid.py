import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from imcflab.grid import (Grid2D, GridError, ScalarField, TestFunction, VectorField, cells_within, dump_scalar,
                          dump_vector, gradient, integrate, lattice_tests, load_scalar, load_vector, perp,
                          weak_divergence_residual)


def field(grid, fn):
    return ScalarField.from_function(grid, fn)


def test_grid_invariants():
    g = Grid2D.square(-1, 1, 5)
    assert g.h == 0.5 and g.node(2, 3) == (0.0, 0.5)
    with pytest.raises(GridError):
        Grid2D(0, 0, 0.0, 5, 5)
    with pytest.raises(GridError):
        Grid2D(0, 0, 0.1, 2, 5)


def test_scalar_field_rejects_non_finite():
    g = Grid2D.square(0, 1, 3)
    vals = np.zeros(g.shape)
    vals[1, 1] = np.nan
    with pytest.raises(GridError):
        ScalarField(g, vals)


def test_gradient_constant_and_linear():
    g = Grid2D.square(-1, 1, 9)
    assert np.all(gradient(field(g, lambda x, y: 5 + 0 * x)).values == 0)
    G = gradient(field(g, lambda x, y: y)).values
    assert np.allclose(G[..., 0], 0) and np.allclose(G[..., 1], 1)


def test_gradient_bilinear_hand_value():
    g = Grid2D.square(-1, 1, 5)  # h = 0.5
    G = gradient(field(g, lambda x, y: x * y)).values
    Xc, Yc = g.centers()
    j, i = np.argwhere(np.isclose(Xc, 0.25) & np.isclose(Yc, 0.25))[0]
    assert np.allclose(G[j, i], (0.25, 0.25))


def test_perp_definition():
    g = Grid2D.square(0, 1, 4)
    e2 = VectorField(g, np.broadcast_to([0.0, 1.0], (*g.cell_shape, 2)).copy())
    e1 = VectorField(g, np.broadcast_to([1.0, 0.0], (*g.cell_shape, 2)).copy())
    assert np.allclose(perp(e2).values, [-1, 0]) and np.allclose(perp(e1).values, [0, 1])


@settings(max_examples=30, deadline=None)
@given(arrays(float, (4, 4, 2), elements=st.floats(-1e6, 1e6)))
def test_perp_twice_is_minus(vals):
    g = Grid2D.square(0, 1, 5)
    F = VectorField(g, vals)
    assert np.array_equal(perp(perp(F)).values, -vals)


def test_integrate_examples():
    g = Grid2D.square(-1, 1, 65)
    assert integrate(np.ones(g.cell_shape), None, g) == pytest.approx(4.0, abs=1e-12)
    Xc, Yc = g.centers()
    assert abs(integrate(Xc, None, g)) < 1e-13
    assert integrate(Xc ** 2, None, g) == pytest.approx(4 / 3, abs=1e-3)


def test_test_function_support_and_inside():
    t = TestFunction((0.0, 0.0), 0.5)
    assert t.value(0.5, 0.0) == 0 and t.value(1.0, 1.0) == 0
    assert np.allclose(t.gradient(np.array([0.5]), np.array([0.0])), 0)
    assert t.value(0.0, 0.0) == pytest.approx(1.0)
    with pytest.raises(GridError):
        TestFunction((0.9, 0.0), 0.5).check_inside(Grid2D.square(-1, 1, 9))


def test_weak_div_zero_data():
    g = Grid2D.square(-1, 1, 17)
    F = VectorField(g, np.zeros((*g.cell_shape, 2)))
    assert weak_divergence_residual(F, np.zeros(g.cell_shape), [TestFunction((0, 0), 0.5)]) == [0.0]


def _circle_residual(n):
    g = Grid2D.square(-2, 2, n)
    Xc, Yc = g.centers()
    R = np.hypot(Xc, Yc)
    F = VectorField(g, np.stack([Xc / R, Yc / R], -1))
    return max(abs(r) for r in weak_divergence_residual(F, 1 / R, [TestFunction((1.0, 0.3), 0.4),
                                                                     TestFunction((-0.6, -0.9), 0.4)]))


def test_weak_div_circle_vanishes_under_refinement():
    r = [_circle_residual(n) for n in (65, 129, 257)]
    assert r[0] < 1e-2 and r[1] < r[0] and r[2] < r[1]


def test_lattice_tests_respect_region():
    g = Grid2D.square(-1, 1, 33)
    ts = lattice_tests(g, 0.2, 0.2, region=lambda x, y: x > 0)
    assert ts and all(t.center[0] - t.radius > 0 for t in ts)
    for t in ts:
        t.check_inside(g)


def test_cells_within():
    g = Grid2D.square(-1, 1, 5)
    m = cells_within(g, lambda x, y: x >= 0)
    assert m.sum() == 8


def test_dump_load_round_trip(tmp_path):
    g = Grid2D(-0.3, 0.1, 1 / 7, 9, 6)
    rng = np.random.default_rng(0)
    u = ScalarField(g, rng.standard_normal(g.shape))
    dump_scalar(u, tmp_path / "u.csv")
    v = load_scalar(tmp_path / "u.csv")
    assert v.grid == g and np.array_equal(v.values, u.values)
    F = gradient(u)
    dump_vector(F, tmp_path / "F.csv")
    G = load_vector(tmp_path / "F.csv")
    assert np.array_equal(G.values, F.values)


def test_load_rejects_nan_row(tmp_path):
    g = Grid2D.square(0, 1, 4)
    dump_scalar(ScalarField(g, np.zeros(g.shape)), tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0] + ",nan"
    (tmp_path / "u.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(GridError, match="row 6"):
        load_scalar(tmp_path / "u.csv")


def test_load_rejects_missing_node(tmp_path):
    g = Grid2D.square(0, 1, 4)
    dump_scalar(ScalarField(g, np.zeros(g.shape)), tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    del lines[1 + 1 * 4 + 2]  # node (2, 1)
    (tmp_path / "u.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(GridError, match=r"missing node \(2, 1\)"):
        load_scalar(tmp_path / "u.csv")


def test_load_rejects_nonuniform(tmp_path):
    rows = ["x,y,value"] + [f"{x},{y},0" for y in (0, 1, 2) for x in (0, 1, 2.5)]
    (tmp_path / "u.csv").write_text("\n".join(rows) + "\n")
    with pytest.raises(GridError, match="non-uniform"):
        load_scalar(tmp_path / "u.csv")

import numpy as np
import pytest

from imcflab import corpus
from imcflab.grid import Grid2D, GridError


def rand_points(rng, n, lo, hi):
    return rng.uniform(lo, hi, n), rng.uniform(lo, hi, n)


@pytest.mark.parametrize("sol,lo,hi", [(corpus.linear(), -1, 1), (corpus.aronsson43(), 0.05, 1),
                                       (corpus.angle(), 0.6, 1.3), (corpus.normalized_angle(), -1, 1)])
def test_gradient_matches_finite_differences(sol, lo, hi):
    x, y = rand_points(np.random.default_rng(3), 1000, lo, hi)
    e = 1e-6
    fd = np.stack([(sol.value(x + e, y) - sol.value(x - e, y)) / (2 * e),
                   (sol.value(x, y + e) - sol.value(x, y - e)) / (2 * e)], -1)
    assert np.abs(fd - sol.gradient(x, y)).max() < 1e-6


@pytest.mark.parametrize("sol,lo,hi", [(corpus.aronsson43(), 0.05, 1), (corpus.angle(), 0.6, 1.3),
                                       (corpus.normalized_angle(), -1, 1)])
def test_aronsson_equation_holds_where_c2(sol, lo, hi):
    x, y = rand_points(np.random.default_rng(4), 1000, lo, hi)
    assert np.all(sol.c2(x, y))
    assert np.abs(sol.aronsson_defect(x, y)).max() < 1e-8


def test_members_and_values():
    assert [m.name for m in corpus.members()] == ["linear", "aronsson43", "angle"]
    assert corpus.aronsson43().grad_norm(0.5, 0.5) == pytest.approx(4 / 3 * np.sqrt(2 * 0.5 ** (2 / 3)), rel=1e-12)
    assert corpus.aronsson43().grad_norm(0.5, 0.5) == pytest.approx(1.4966, abs=1e-4)
    assert corpus.angle().exact_w(1.0, 0.0) == 0.0
    with pytest.raises(KeyError):
        corpus.member("nope")


def test_sample_examples():
    s = corpus.sample(corpus.linear(), Grid2D.square(-1, 1, 5))
    assert np.array_equal(s.u.values, Grid2D.square(-1, 1, 5).nodes()[1])
    g = Grid2D.square(0.4, 1.2, 9)
    s = corpus.sample(corpus.angle(), g)
    i, j = g.nearest_node(0.6, 0.8)
    assert s.grad_norm.values[j, i] == pytest.approx(1.0, rel=1e-12)
    s = corpus.sample(corpus.aronsson43(), Grid2D.square(-1, 1, 9))
    X, Y = Grid2D.square(-1, 1, 9).nodes()
    axis = (X == 0) | (Y == 0)
    assert not s.defined[axis].any() and s.defined[~axis].all()
    with pytest.raises(GridError):
        corpus.sample(corpus.angle(), Grid2D.square(0, 1, 9))


def test_rescale_orientation_and_normalisation():
    na = corpus.normalized_angle()
    assert np.allclose(na.gradient(0.0, 0.0), [0, 1])
    assert na.omega(0.0, 0.0) == -1
    flipped = corpus.rescale(corpus.angle(), 1.0, 1.0, [[1, 0], [0, 1]], (1.0, 1.0))
    assert flipped.omega(0.0, 0.0) == corpus.angle().omega(1.0, 1.0)


def test_prop1_problem_linear_slab():
    slab = corpus.make_prop1_problem(corpus.linear(), 0.05, 0.5, 65)
    X, Y = slab.problem.grid.nodes()
    assert np.array_equal(slab.inside, np.abs(Y) < 0.75 - 1e-12)


def test_prop1_problem_tilted():
    xi = np.array([0.03, 1.0]) / np.hypot(0.03, 1.0)
    slab = corpus.make_prop1_problem(corpus.linear(tuple(xi)), 0.05, 0.5, 65)
    X, Y = slab.problem.grid.nodes()
    assert slab.inside[np.abs(Y) <= 0.5].all()
    assert slab.pinch <= 0.05


def test_prop1_problem_pinch_and_ranges():
    corpus.make_prop1_problem(corpus.normalized_angle(r=0.05 * 0.05 * 1.5), 0.05, 0.5, 33)
    with pytest.raises(GridError, match="pinch"):
        corpus.make_prop1_problem(corpus.normalized_angle(r=0.2), 0.05, 0.5, 33)
    with pytest.raises(ValueError):
        corpus.make_prop1_problem(corpus.linear(), 0.07, 0.5)
    with pytest.raises(ValueError):
        corpus.make_prop1_problem(corpus.linear(), 0.05, 0.7)

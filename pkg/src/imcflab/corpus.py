"""Closed-form infinity-harmonic functions used as oracles, plus the local
slab problem built around a rescaled member.

Every evaluator takes arrays ``x, y`` of equal shape and broadcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import Grid2D, GridError, ScalarField
from .plaplace import DirichletProblem

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExactSolution:
    """Analytic member: value, gradient (last axis 2), Hessian (last axes 2x2),
    orientation (0 where undefined) and a domain predicate."""

    name: str
    value: Evaluator
    gradient: Evaluator
    hessian: Evaluator
    omega: Evaluator
    domain: Callable[[np.ndarray, np.ndarray], np.ndarray]
    domain_text: str
    c2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    notes: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def grad_norm(self, x, y) -> np.ndarray:
        g = self.gradient(x, y)
        return np.hypot(g[..., 0], g[..., 1])

    def exact_w(self, x, y) -> np.ndarray:
        return -np.log(self.grad_norm(x, y))

    def aronsson_defect(self, x, y) -> np.ndarray:
        """grad u . grad |grad u|^2 = 2 grad u^T H grad u, from the analytic Hessian."""
        g = self.gradient(x, y)
        H = self.hessian(x, y)
        return 2.0 * np.einsum("...i,...ij,...j->...", g, H, g)


def _stack(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return np.stack([a, b], axis=-1)


def _mat(a, b, c, d):
    a, b, c, d = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (a, b, c, d)))
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def linear(xi: tuple[float, float] = (0.0, 1.0)) -> ExactSolution:
    a, b = float(xi[0]), float(xi[1])
    if a == 0 and b == 0:
        raise ValueError("xi must be nonzero")
    zero = lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)  # noqa: E731
    return ExactSolution(
        name="linear",
        value=lambda x, y: a * np.asarray(x, dtype=float) + b * np.asarray(y, dtype=float),
        gradient=lambda x, y: _stack(a + zero(x, y), b + zero(x, y)),
        hessian=lambda x, y: _mat(zero(x, y), zero(x, y), zero(x, y), zero(x, y)),
        # constant |grad u|: both signs are orientations, +1 by tie-break
        omega=lambda x, y: 1.0 + zero(x, y),
        domain=lambda x, y: np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool),
        domain_text="R^2",
        c2=lambda x, y: np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool),
        notes="smooth everywhere; exact_w constant",
        params={"xi": [a, b]},
    )


def aronsson43() -> ExactSolution:
    def value(x, y):
        return np.abs(x) ** (4 / 3) - np.abs(y) ** (4 / 3)

    def grad(x, y):
        return _stack(4 / 3 * np.sign(x) * np.abs(x) ** (1 / 3), -4 / 3 * np.sign(y) * np.abs(y) ** (1 / 3))

    def hess(x, y):
        with np.errstate(divide="ignore"):
            hxx = 4 / 9 * np.abs(x) ** (-2 / 3)
            hyy = -4 / 9 * np.abs(y) ** (-2 / 3)
        z = np.zeros_like(hxx)
        return _mat(hxx, z, z, hyy)

    def omega(x, y):
        return np.sign(np.asarray(x, dtype=float) * np.asarray(y, dtype=float))

    def dom(x, y):
        return np.isfinite(np.asarray(x, dtype=float)) & np.isfinite(np.asarray(y, dtype=float))

    return ExactSolution(
        name="aronsson43", value=value, gradient=grad, hessian=hess, omega=omega, domain=dom,
        domain_text="R^2 (experiments use [-1,1]^2)", c2=lambda x, y: (np.asarray(x) != 0) & (np.asarray(y) != 0),
        notes="C^{1,1/3} across the axes, C^2 off them; orientation sign(x1 x2), undefined on the axes",
    )


def angle(r_min: float = 0.5, r_max: float = 2.0) -> ExactSolution:
    """theta = atan2(x2, x1) on the quarter annulus r_min <= r <= r_max."""

    def value(x, y):
        return np.arctan2(y, x)

    def grad(x, y):
        r2 = np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
        return _stack(-y / r2, x / r2)

    def hess(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r4 = (x * x + y * y) ** 2
        return _mat(2 * x * y / r4, (y * y - x * x) / r4, (y * y - x * x) / r4, -2 * x * y / r4)

    def dom(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        return (r >= r_min - 1e-12) & (r <= r_max + 1e-12) & (x >= -1e-12) & (y >= -1e-12)

    # |grad u| = 1/r grows along rays in the direction of grad^perp u = -x/r^2
    return ExactSolution(
        name="angle", value=value, gradient=grad, hessian=hess,
        omega=lambda x, y: np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape),
        domain=dom, domain_text=f"{{{r_min} <= r <= {r_max}, 0 <= theta <= pi/2}}",
        c2=dom, notes="p-harmonic for every p; exact_w = log r", params={"r_min": r_min, "r_max": r_max},
    )


def members() -> list[ExactSolution]:
    return [linear(), aronsson43(), angle()]


def member(name: str, **kw) -> ExactSolution:
    table = {"linear": linear, "aronsson43": aronsson43, "angle": angle}
    if name not in table:
        raise KeyError(f"unknown corpus member {name!r}; choose from {sorted(table)}")
    return table[name](**kw)


def rescale(sol: ExactSolution, a: float, r: float, R, x0) -> ExactSolution:
    """u~(x) = a u(r R x + x0); orientation flips when a det R < 0."""
    R = np.asarray(R, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if a == 0 or r <= 0 or not np.allclose(R @ R.T, np.eye(2), atol=1e-12):
        raise ValueError("need a != 0, r > 0 and R orthogonal")
    sgn = float(np.sign(a * np.linalg.det(R)))

    def pull(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return x0[0] + r * (R[0, 0] * x + R[0, 1] * y), x0[1] + r * (R[1, 0] * x + R[1, 1] * y)

    def value(x, y):
        return a * sol.value(*pull(x, y))

    def grad(x, y):
        return a * r * np.einsum("ji,...j->...i", R, sol.gradient(*pull(x, y)))

    def hess(x, y):
        return a * r * r * np.einsum("ki,...kl,lj->...ij", R, sol.hessian(*pull(x, y)), R)

    return ExactSolution(
        name=f"{sol.name}~", value=value, gradient=grad, hessian=hess,
        omega=lambda x, y: sgn * sol.omega(*pull(x, y)),
        domain=lambda x, y: sol.domain(*pull(x, y)),
        domain_text=f"preimage of {sol.domain_text}",
        c2=lambda x, y: sol.c2(*pull(x, y)),
        notes=sol.notes,
        params={"base": sol.name, "a": a, "r": r, "R": R.tolist(), "x0": x0.tolist(), **sol.params},
    )


def normalized_angle(r: float = 0.02, x0: tuple[float, float] = (1.5, 0.0)) -> ExactSolution:
    """Angle member blown up around x0 with grad u~(0) = e2 and negative orientation.

    The reflection x1 -> -x1 makes a det R < 0.
    """
    rho = math.hypot(*x0)
    if not (x0[1] == 0 and x0[0] > 0):
        raise ValueError("normalized_angle expects x0 on the positive x1-axis")
    base = angle()
    lo, hi = base.params["r_min"], base.params["r_max"]

    def half_annulus(x, y):
        # theta is smooth across the positive x1-axis, where the blow-up lives
        x = np.asarray(x, dtype=float)
        rr = np.hypot(x, np.asarray(y, dtype=float))
        return (rr >= lo - 1e-12) & (rr <= hi + 1e-12) & (x > 0)

    base = replace(base, domain=half_annulus, c2=half_annulus,
                   domain_text=f"{{{lo} <= r <= {hi}, x1 > 0}}")
    return rescale(base, a=rho / r, r=r, R=[[-1.0, 0.0], [0.0, 1.0]], x0=x0)


@dataclass
class Sample:
    u: ScalarField
    grad_norm: ScalarField
    omega: np.ndarray       # node values in {-1, 0, +1}
    defined: np.ndarray     # omega != 0


def sample(sol: ExactSolution, grid: Grid2D) -> Sample:
    X, Y = grid.nodes()
    inside = sol.domain(X, Y)
    if not inside.all():
        j, i = np.argwhere(~inside)[0]
        raise GridError(f"grid node ({i}, {j}) at {grid.node(i, j)} lies outside {sol.name} domain {sol.domain_text}")
    om = sol.omega(X, Y)
    return Sample(ScalarField(grid, sol.value(X, Y)), ScalarField(grid, sol.grad_norm(X, Y)), om, om != 0)


# ------------------------------------------------------------- local slab problem


@dataclass
class SlabProblem:
    """The level slab U = {a < u - sigma x2 < b} inside Q_1 with data from the member."""

    sol: ExactSolution
    delta: float
    sigma: float
    problem: DirichletProblem
    inside: np.ndarray          # node mask of U
    lower: np.ndarray           # polyline of {u - sigma x2 = a}
    upper: np.ndarray
    lipschitz_bound: float
    pinch: float                # max |grad u - e2| on the grid

    @property
    def cell_mask(self) -> np.ndarray:
        """Cells with all four corners free: the region where the conjugate lives."""
        f = self.problem.free
        return f[:-1, :-1] & f[:-1, 1:] & f[1:, :-1] & f[1:, 1:]


def check_pinch(sol: ExactSolution, grid: Grid2D, delta: float) -> float:
    X, Y = grid.nodes()
    g = sol.gradient(X, Y)
    dev = np.hypot(g[..., 0], g[..., 1] - 1.0)
    k = int(np.argmax(dev))
    if dev.flat[k] > delta:
        j, i = np.unravel_index(k, grid.shape)
        raise GridError(f"gradient pinch |grad u - e2| <= {delta} violated at node ({i}, {j}) "
                        f"{grid.node(i, j)}: {dev.flat[k]:.4g}")
    return float(dev.max())


def make_prop1_problem(sol: ExactSolution, delta: float = 0.05, sigma: float = 0.5, n: int = 65) -> SlabProblem:
    from .streamlines import trace_level_set  # local import: streamlines imports corpus types

    if not 0 < delta < 1 / 16:
        raise ValueError(f"delta must lie in (0, 1/16), got {delta}")
    if not 0.5 <= sigma < 1 - 8 * delta:
        raise ValueError(f"sigma must lie in [1/2, 1 - 8 delta) = [0.5, {1 - 8 * delta:.4g}), got {sigma}")
    grid = Grid2D.square(-1.0, 1.0, n)
    pinch = check_pinch(sol, grid, delta)
    X, Y = grid.nodes()
    ut = ScalarField(grid, sol.value(X, Y) - sigma * Y)
    a = float(sol.value(np.array(0.0), np.array(-0.75)) + 0.75 * sigma)
    b = float(sol.value(np.array(0.0), np.array(0.75)) - 0.75 * sigma)
    lower = trace_level_set(ut, a, (0.0, -0.75), step=grid.h / 2, margin=0.0).points
    upper = trace_level_set(ut, b, (0.0, 0.75), step=grid.h / 2, margin=0.0).points
    y_lo = _graph(lower, grid.xs)
    y_hi = _graph(upper, grid.xs)
    inside = (Y > y_lo[None, :]) & (Y < y_hi[None, :])
    free = inside & ~grid.boundary_mask()
    lip = delta / math.sqrt((1 - sigma) ** 2 - delta ** 2)
    problem = DirichletProblem(grid, sol.value(X, Y), free)
    return SlabProblem(sol, delta, sigma, problem, inside, lower, upper, lip, pinch)


def _graph(poly: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Read a traced curve as a graph x2 = f(x1) and evaluate it at xs."""
    order = np.argsort(poly[:, 0])
    px, py = poly[order, 0], poly[order, 1]
    if np.any(np.diff(px) <= 0):
        raise GridError("level curve is not a graph over the x1-axis")
    if px[0] > xs[0] + 1e-9 or px[-1] < xs[-1] - 1e-9:
        raise GridError("level curve does not span the square")
    return np.interp(xs, px, py)

"""Uniform 2D grid, node/cell fields and the discrete calculus used everywhere else.

Scalars live on nodes, vectors on cell centres.  Arrays are indexed ``[j, i]``
(row ``j`` along ``y``, column ``i`` along ``x``), so a flattened array is
row-major with ``x`` running fastest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GridError(ValueError):
    """Invalid grid, field or test-function input."""


@dataclass(frozen=True)
class Grid2D:
    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not (self.h > 0 and math.isfinite(self.h)):
            raise GridError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 3 or self.ny < 3:
            raise GridError(f"need at least 3 nodes per axis, got {self.nx}x{self.ny}")

    @classmethod
    def square(cls, lo: float, hi: float, n: int) -> "Grid2D":
        """n x n nodes spanning [lo, hi]^2."""
        return cls(lo, lo, (hi - lo) / (n - 1), n, n)

    @classmethod
    def box(cls, xlo: float, xhi: float, ylo: float, h: float) -> "Grid2D":
        nx = int(round((xhi - xlo) / h)) + 1
        return cls(xlo, ylo, h, nx, nx)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.ny - 1, self.nx - 1)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny)

    @property
    def x1(self) -> float:
        return self.x0 + self.h * (self.nx - 1)

    @property
    def y1(self) -> float:
        return self.y0 + self.h * (self.ny - 1)

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.x0 + i * self.h, self.y0 + j * self.h)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs[:-1] + 0.5 * self.h, self.ys[:-1] + 0.5 * self.h)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    def nearest_node(self, x: float, y: float) -> tuple[int, int]:
        i = int(round((x - self.x0) / self.h))
        j = int(round((y - self.y0) / self.h))
        return (min(max(i, 0), self.nx - 1), min(max(j, 0), self.ny - 1))

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (self.x0 + margin <= x <= self.x1 - margin) and (self.y0 + margin <= y <= self.y1 - margin)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.nx * self.grid.ny:
            raise GridError(f"scalar field has {v.size} values, grid needs {self.grid.nx * self.grid.ny}")
        v = v.reshape(self.grid.shape)
        bad = ~np.isfinite(v)
        if bad.any():
            j, i = np.argwhere(bad)[0]
            raise GridError(f"non-finite scalar value at node ({i}, {j})")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        X, Y = grid.nodes()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape).astype(float))

    def cell_average(self) -> np.ndarray:
        v = self.values
        return 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])

    def interpolate(self, x, y) -> np.ndarray:
        """Bilinear interpolation at arbitrary points inside the grid."""
        return bilinear(self.values, self.grid.x0, self.grid.y0, self.grid.h, x, y)


@dataclass(frozen=True)
class VectorField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        ny, nx = self.grid.cell_shape
        if v.size != nx * ny * 2:
            raise GridError(f"vector field has {v.size // 2} vectors, grid needs {nx * ny}")
        v = v.reshape(ny, nx, 2)
        bad = ~np.isfinite(v).all(axis=-1)
        if bad.any():
            j, i = np.argwhere(bad)[0]
            raise GridError(f"non-finite vector at cell ({i}, {j})")
        object.__setattr__(self, "values", v)

    @property
    def norm(self) -> np.ndarray:
        return np.hypot(self.values[..., 0], self.values[..., 1])


def bilinear(values: np.ndarray, x0: float, y0: float, h: float, x, y) -> np.ndarray:
    """Bilinear interpolation of a node-like array with origin (x0, y0) and spacing h.

    Points outside the lattice are clamped to the boundary cell (extrapolated
    bilinearly); callers are responsible for margin checks.
    """
    ny, nx = values.shape[:2]
    fx = (np.asarray(x, dtype=float) - x0) / h
    fy = (np.asarray(y, dtype=float) - y0) / h
    i = np.clip(np.floor(fx).astype(int), 0, nx - 2)
    j = np.clip(np.floor(fy).astype(int), 0, ny - 2)
    tx = fx - i
    ty = fy - j
    if values.ndim == 3:
        tx = tx[..., None]
        ty = ty[..., None]
    return ((1 - tx) * (1 - ty) * values[j, i] + tx * (1 - ty) * values[j, i + 1]
            + (1 - tx) * ty * values[j + 1, i] + tx * ty * values[j + 1, i + 1])


@dataclass(frozen=True)
class TestFunction:
    """Smooth bump exp(1 - 1/(1 - |x-c|^2/rho^2)) supported in the open disk B_rho(c)."""

    center: tuple[float, float]
    radius: float
    label: str = field(default="", compare=False)

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise GridError("test function radius must be positive")

    def _s(self, x, y):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        return dx, dy, (dx * dx + dy * dy) / self.radius ** 2

    def value(self, x, y) -> np.ndarray:
        _, _, s = self._s(x, y)
        inside = s < 1.0
        out = np.zeros(np.shape(s))
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si))
        return out

    def gradient(self, x, y) -> np.ndarray:
        dx, dy, s = self._s(x, y)
        inside = s < 1.0
        out = np.zeros(np.shape(s) + (2,))
        si = s[inside]
        eta = np.exp(1.0 - 1.0 / (1.0 - si))
        fac = -2.0 * eta / (self.radius ** 2 * (1.0 - si) ** 2)
        out[inside, 0] = fac * dx[inside]
        out[inside, 1] = fac * dy[inside]
        return out

    def laplacian(self, x, y) -> np.ndarray:
        dx, dy, s = self._s(x, y)
        inside = s < 1.0
        out = np.zeros(np.shape(s))
        si = s[inside]
        rho2 = self.radius ** 2
        eta = np.exp(1.0 - 1.0 / (1.0 - si))
        # eta = exp(phi(s)), phi' = -1/(1-s)^2, phi'' = -2/(1-s)^3, s = |d|^2/rho^2
        d1 = -1.0 / (1.0 - si) ** 2
        d2 = -2.0 / (1.0 - si) ** 3
        r2 = (dx[inside] ** 2 + dy[inside] ** 2) / rho2
        # Laplacian of f(s) in 2D: f'(s) * 4/rho^2 + f''(s) * 4 r^2/rho^2
        fp = eta * d1
        fpp = eta * (d1 * d1 + d2)
        out[inside] = 4.0 / rho2 * (fp + fpp * r2)
        return out

    def bbox_cells(self, grid: Grid2D) -> tuple[slice, slice]:
        cx, cy = self.center
        i0 = max(int(math.floor((cx - self.radius - grid.x0) / grid.h)), 0)
        i1 = min(int(math.ceil((cx + self.radius - grid.x0) / grid.h)), grid.nx - 1)
        j0 = max(int(math.floor((cy - self.radius - grid.y0) / grid.h)), 0)
        j1 = min(int(math.ceil((cy + self.radius - grid.y0) / grid.h)), grid.ny - 1)
        return slice(j0, j1), slice(i0, i1)

    def check_inside(self, grid: Grid2D) -> None:
        cx, cy = self.center
        r = self.radius
        if not (grid.x0 < cx - r and cx + r < grid.x1 and grid.y0 < cy - r and cy + r < grid.y1):
            raise GridError(f"test function {self.label or self.center} support leaves the grid interior")


def gradient(u: ScalarField) -> VectorField:
    """Cell-centred gradient: mean of the two parallel one-sided differences.

    Exact for bilinear fields.
    """
    v = u.values
    h = u.grid.h
    gx = 0.5 * ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / h
    gy = 0.5 * ((v[1:, :-1] - v[:-1, :-1]) + (v[1:, 1:] - v[:-1, 1:])) / h
    return VectorField(u.grid, np.stack([gx, gy], axis=-1))


def perp(g: VectorField) -> VectorField:
    """Rotate every vector by +pi/2: (a, b) -> (-b, a)."""
    a = g.values[..., 0]
    b = g.values[..., 1]
    return VectorField(g.grid, np.stack([-b, a], axis=-1))


def _cell_values(grid: Grid2D, s) -> np.ndarray:
    if isinstance(s, ScalarField):
        if s.grid != grid:
            raise GridError("scalar field lives on a different grid")
        return s.cell_average()
    arr = np.asarray(s, dtype=float)
    if arr.shape != grid.cell_shape:
        raise GridError(f"cell array has shape {arr.shape}, expected {grid.cell_shape}")
    if not np.isfinite(arr).all():
        raise GridError("non-finite cell value")
    return arr


def integrate(s, mask: np.ndarray | None = None, grid: Grid2D | None = None) -> float:
    """Midpoint rule: sum over cells of h^2 times the cell value.

    ``s`` is a ScalarField (nodal values averaged to cells) or a cell array,
    in which case ``grid`` is required.  ``mask`` is a boolean cell array.
    """
    if isinstance(s, ScalarField):
        grid = s.grid
    elif grid is None:
        raise GridError("grid required when integrating a cell array")
    cells = _cell_values(grid, s)
    if mask is not None:
        cells = np.where(mask, cells, 0.0)
    return float(math.fsum(cells.ravel()) * grid.h ** 2)


def weak_divergence_residual(F: VectorField, s, tests: Sequence[TestFunction],
                             mask: np.ndarray | None = None) -> list[float]:
    """r(eta) = int F . grad(eta) + int eta * s for each test function.

    Zero (up to quadrature error) when div F = s weakly.  ``s`` may be a
    ScalarField or a cell array on ``F.grid``.
    """
    grid = F.grid
    cells = _cell_values(grid, s)
    X, Y = grid.centers()
    out = []
    for eta in tests:
        eta.check_inside(grid)
        sj, si = eta.bbox_cells(grid)
        xc, yc = X[sj, si], Y[sj, si]
        g = eta.gradient(xc, yc)
        e = eta.value(xc, yc)
        integrand = F.values[sj, si, 0] * g[..., 0] + F.values[sj, si, 1] * g[..., 1] + e * cells[sj, si]
        if mask is not None:
            integrand = np.where(mask[sj, si], integrand, 0.0)
        out.append(float(math.fsum(integrand.ravel()) * grid.h ** 2))
    return out


def lattice_tests(grid: Grid2D, radius: float, spacing: float | None = None,
              region=None, prefix: str = "eta") -> list[TestFunction]:
    """Test functions on a regular lattice of centres whose supports fit in the grid.

    ``region(x, y) -> bool`` optionally restricts centres (it is evaluated on
    a ring of points around the support, so the whole support must qualify).
    """
    spacing = spacing or radius
    margin = radius + grid.h
    xs = np.arange(grid.x0 + margin, grid.x1 - margin + 1e-12, spacing)
    ys = np.arange(grid.y0 + margin, grid.y1 - margin + 1e-12, spacing)
    ang = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    tests = []
    for cy in ys:
        for cx in xs:
            if region is not None:
                px = np.concatenate([[cx], cx + radius * np.cos(ang)])
                py = np.concatenate([[cy], cy + radius * np.sin(ang)])
                if not np.all(region(px, py)):
                    continue
            tests.append(TestFunction((float(cx), float(cy)), radius, f"{prefix}@({cx:.4g},{cy:.4g})"))
    return tests


# ---------------------------------------------------------------- CSV dumps


def dump_scalar(u: ScalarField, path: str | Path) -> None:
    X, Y = u.grid.nodes()
    with open(path, "w", newline="") as fh:
        fh.write("x,y,value\n")
        for x, y, v in zip(X.ravel(), Y.ravel(), u.values.ravel()):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")


def dump_vector(F: VectorField, path: str | Path) -> None:
    X, Y = F.grid.centers()
    with open(path, "w", newline="") as fh:
        fh.write("x,y,fx,fy\n")
        for x, y, a, b in zip(X.ravel(), Y.ravel(), F.values[..., 0].ravel(), F.values[..., 1].ravel()):
            fh.write(f"{x:.17g},{y:.17g},{a:.17g},{b:.17g}\n")


def _read_lattice(path, columns: list[str], tol: float) -> tuple[float, float, float, np.ndarray]:
    """Parse ``x,y,<columns>`` rows on a complete uniform lattice.

    Returns (x0, y0, h, values[ny, nx, len(columns)]).
    """
    header_want = ["x", "y", *columns]
    width = len(header_want)
    rows: list[tuple[float, ...]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != header_want:
            raise GridError(f"{path}: expected header '{','.join(header_want)}'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise GridError(f"{path}: row {lineno}: expected {width} columns")
            try:
                vals = tuple(float(c) for c in rec)
            except ValueError as exc:
                raise GridError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise GridError(f"{path}: row {lineno}: non-finite entry")
            rows.append(vals)
    if len(rows) < 9:
        raise GridError(f"{path}: too few rows")
    arr = np.array(rows)
    xs = _merge_close(np.unique(arr[:, 0]), tol)
    ys = _merge_close(np.unique(arr[:, 1]), tol)
    hx = _uniform_step(xs, tol, path, "x")
    hy = _uniform_step(ys, tol, path, "y")
    if abs(hx - hy) > tol * max(1.0, abs(hx)):
        raise GridError(f"{path}: x spacing {hx} differs from y spacing {hy}")
    out = np.full((len(ys), len(xs), len(columns)), np.nan)
    seen = np.zeros((len(ys), len(xs)), dtype=bool)
    x0, y0 = float(xs[0]), float(ys[0])
    for lineno, rec in enumerate(rows, start=2):
        x, y = rec[0], rec[1]
        i = int(round((x - x0) / hx))
        j = int(round((y - y0) / hy))
        if abs(x0 + i * hx - x) > tol * max(1.0, abs(x)) or abs(y0 + j * hy - y) > tol * max(1.0, abs(y)):
            raise GridError(f"{path}: row {lineno}: point off the uniform lattice")
        if seen[j, i]:
            raise GridError(f"{path}: row {lineno}: duplicate node ({i}, {j})")
        seen[j, i] = True
        out[j, i] = rec[2:]
    if not seen.all():
        j, i = np.argwhere(~seen)[0]
        raise GridError(f"{path}: missing node ({i}, {j})")
    return x0, y0, float(hx), out


def load_scalar(path: str | Path, tol: float = 1e-9) -> ScalarField:
    """Rebuild a ScalarField from an ``x,y,value`` dump.

    The lattice must be uniform (within ``tol``) and complete.
    """
    x0, y0, h, vals = _read_lattice(path, ["value"], tol)
    ny, nx, _ = vals.shape
    return ScalarField(Grid2D(x0, y0, h, nx, ny), vals[..., 0])


def load_vector(path: str | Path, tol: float = 1e-9) -> VectorField:
    """Rebuild a cell VectorField from an ``x,y,fx,fy`` dump of cell centres."""
    cx0, cy0, h, vals = _read_lattice(path, ["fx", "fy"], tol)
    ny, nx, _ = vals.shape
    return VectorField(Grid2D(cx0 - h / 2, cy0 - h / 2, h, nx + 1, ny + 1), vals)


def _merge_close(vals: np.ndarray, tol: float) -> np.ndarray:
    out = [vals[0]]
    for v in vals[1:]:
        if abs(v - out[-1]) > tol * max(1.0, abs(v)):
            out.append(v)
    return np.array(out)


def _uniform_step(vals: np.ndarray, tol: float, path, axis: str) -> float:
    if len(vals) < 3:
        raise GridError(f"{path}: need at least 3 distinct {axis} coordinates")
    d = np.diff(vals)
    step = (vals[-1] - vals[0]) / (len(vals) - 1)
    if np.max(np.abs(d - step)) > tol * max(1.0, abs(step)) + 1e-9 * abs(step):
        raise GridError(f"{path}: non-uniform {axis} lattice")
    return float(step)


def cells_within(grid: Grid2D, predicate) -> np.ndarray:
    """Cells whose four corner nodes all satisfy ``predicate(x, y)``."""
    X, Y = grid.nodes()
    m = np.asarray(predicate(X, Y), dtype=bool)
    return m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]


def iter_cells(mask: np.ndarray) -> Iterable[tuple[int, int]]:
    for j, i in np.argwhere(mask):
        yield int(i), int(j)

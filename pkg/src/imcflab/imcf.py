"""Weak inverse mean curvature flow certificates, the gradient/divergence
identities for infinity-harmonic functions, and the Huisken-Ilmanen check."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .grid import (Grid2D, GridError, ScalarField, TestFunction, VectorField, gradient,
                   integrate, perp, weak_divergence_residual)

FLAT = 1e-10


@dataclass(frozen=True)
class Tolerances:
    """Thresholds of a certificate; tol_div and tol_align scale with h."""

    tol_F: float = 1e-6
    c_align: float = 1.0
    c_div: float = 0.02
    tol_HI: float = 1e-6
    # absolute floors so that exact data are not rejected for roundoff
    floor: float = 1e-12

    def align(self, h: float) -> float:
        return self.c_align * h + self.floor

    def div(self, h: float) -> float:
        return self.c_div * h + self.floor


@dataclass
class ImcfCertificate:
    sup_F_norm: float
    alignment_residual_L1: float
    weak_div_residuals: list[tuple[str, float]]
    huisken_ilmanen_violations: list[tuple[str, float, float]] = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    @property
    def max_weak_div(self) -> float:
        return max((abs(r) for _, r in self.weak_div_residuals), default=0.0)

    def failing_tests(self) -> list[str]:
        tol = self.thresholds.get("tol_div", math.inf)
        return [k for k, r in self.weak_div_residuals if abs(r) > tol]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict
        d["max_weak_div"] = self.max_weak_div
        d["failing_tests"] = self.failing_tests()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _cell_grad(w: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    G = gradient(w).values
    return G, np.hypot(G[..., 0], G[..., 1])


def certify(w: ScalarField, F: VectorField, tests: Sequence[TestFunction], tol: Tolerances = Tolerances(),
            mask: np.ndarray | None = None, competitors: Sequence[tuple[str, ScalarField]] = (),
            K: np.ndarray | None = None, min_tests: int = 20) -> ImcfCertificate:
    """Check |F| <= 1, F . grad w = |grad w| (L1) and div F = |grad w| weakly.

    ``mask`` restricts the pointwise checks to a cell region (test supports
    must lie inside it).  Competitors, if given, feed the Huisken-Ilmanen
    check on the cell set ``K``.
    """
    if w.grid != F.grid:
        raise GridError("w and F live on different grids")
    if len(tests) < min_tests:
        raise ValueError(f"need at least {min_tests} test functions, got {len(tests)}")
    grid = w.grid
    cells = np.ones(grid.cell_shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    G, gn = _cell_grad(w)
    Fn = F.norm
    sup_F = float(Fn[cells].max()) if cells.any() else 0.0
    dot = (F.values * G).sum(-1)
    align = np.where(gn > FLAT, np.abs(dot - gn), 0.0)
    align_L1 = integrate(align, cells, grid)
    _check_supports(tests, grid, cells)
    res = weak_divergence_residual(F, np.where(cells, gn, 0.0), tests)
    labelled = [(t.label or f"eta{k}", float(r)) for k, (t, r) in enumerate(zip(tests, res))]
    thresholds = {"tol_F": tol.tol_F, "tol_align": tol.align(grid.h), "tol_div": tol.div(grid.h),
                  "tol_HI": tol.tol_HI, "h": grid.h}
    checks = {
        "sup_F": sup_F <= 1 + tol.tol_F,
        "alignment": align_L1 <= thresholds["tol_align"],
        "weak_div": all(abs(r) <= thresholds["tol_div"] for _, r in labelled),
    }
    cert = ImcfCertificate(sup_F, align_L1, labelled, [], thresholds, checks)
    if competitors:
        if K is None:
            raise ValueError("competitors need the cell set K")
        pairs = huisken_ilmanen_check(w, competitors, K)
        cert.huisken_ilmanen_violations = [(k, a, b) for k, a, b in pairs if a > b + tol.tol_HI]
        cert.checks["huisken_ilmanen"] = not cert.huisken_ilmanen_violations
    return cert


def _check_supports(tests: Sequence[TestFunction], grid: Grid2D, cells: np.ndarray) -> None:
    X, Y = grid.centers()
    for t in tests:
        t.check_inside(grid)
        sj, si = t.bbox_cells(grid)
        touched = t.value(X[sj, si], Y[sj, si]) > 0
        if (touched & ~cells[sj, si]).any():
            raise GridError(f"test function {t.label or t.center} reaches cells outside the mask")


# ------------------------------------------------------------------ identities


@dataclass
class IdentityResiduals:
    eq4_L1: float
    eq5: list[float]

    @property
    def eq5_max(self) -> float:
        return max((abs(r) for r in self.eq5), default=0.0)


def theorem1_identities(u: ScalarField, omega, grad_norm: ScalarField, tests: Sequence[TestFunction],
                        mask: np.ndarray | None = None) -> IdentityResiduals:
    """Residuals of |grad g| grad^perp u/|grad u| = omega grad g (L1) and of
    div(grad^perp u/|grad u|) = -omega |grad g|/g (weak), with g = grad_norm.

    ``omega`` is a scalar or a node array (averaged to cells).
    """
    grid = u.grid
    if grad_norm.grid != grid:
        raise GridError("grad_norm lives on a different grid")
    cells = np.ones(grid.cell_shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    Gu = gradient(u).values
    nu = np.hypot(Gu[..., 0], Gu[..., 1])
    if (nu[cells] <= 1e-10).any():
        j, i = np.argwhere(cells & (nu <= 1e-10))[0]
        raise ValueError(f"|grad u| vanishes in cell ({i}, {j}); the identities need grad u != 0")
    om = np.asarray(omega, dtype=float)
    if om.ndim == 0:
        om_c = np.full(grid.cell_shape, float(om))
    else:
        om_c = ScalarField(grid, om).cell_average()
    Gg = gradient(grad_norm).values
    ng = np.hypot(Gg[..., 0], Gg[..., 1])
    X = perp(gradient(u)).values / np.where(nu > 0, nu, 1.0)[..., None]
    lhs = ng[..., None] * X
    err = np.hypot(*(lhs - om_c[..., None] * Gg).transpose(2, 0, 1))
    eq4 = integrate(err, cells, grid)
    gc = grad_norm.cell_average()
    src = -om_c * ng / gc
    _check_supports(tests, grid, cells)
    # weak form of div X = src: int X . grad eta + int eta src = 0
    eq5 = weak_divergence_residual(VectorField(grid, np.where(cells[..., None], X, 0.0)),
                                   np.where(cells, src, 0.0), tests)
    return IdentityResiduals(eq4, eq5)


# ------------------------------------------------------------------ Huisken-Ilmanen


def huisken_ilmanen_check(w: ScalarField, competitors: Sequence[tuple[str, ScalarField]] | Sequence[ScalarField],
                          K: np.ndarray) -> list[tuple[str, float, float]]:
    """(label, lhs, rhs) with lhs = int_K (1 + w)|grad w|, rhs = int_K |grad w~| + w~ |grad w|.

    Each competitor must agree with w at every node that is not interior to K.
    """
    grid = w.grid
    K = np.asarray(K, dtype=bool)
    interior = np.zeros(grid.shape, dtype=bool)
    interior[1:-1, 1:-1] = K[:-1, :-1] & K[:-1, 1:] & K[1:, :-1] & K[1:, 1:]
    _, gw = _cell_grad(w)
    wc = w.cell_average()
    lhs = integrate((1.0 + wc) * gw, K, grid)
    out = []
    for k, comp in enumerate(competitors):
        label, wt = comp if isinstance(comp, tuple) else (f"competitor{k}", comp)
        if wt.grid != grid:
            raise GridError(f"{label} lives on a different grid")
        diff = wt.values != w.values
        if (diff & ~interior).any():
            j, i = np.argwhere(diff & ~interior)[0]
            raise ValueError(f"{label} differs from w at node ({i}, {j}) outside K")
        _, gt = _cell_grad(wt)
        rhs = integrate(gt + wt.cell_average() * gw, K, grid)
        out.append((label, lhs, rhs))
    return out


def bump_competitors(w: ScalarField, K: np.ndarray, n: int = 50, seed: int = 0,
                     amplitudes: Sequence[float] = (0.01, 0.1, 1.0),
                     radius_range: tuple[float, float] | None = None) -> list[tuple[str, ScalarField]]:
    """w + a eta with random centres, radii and signs; eta supported in the interior of K."""
    grid = w.grid
    rng = np.random.default_rng(seed)
    K = np.asarray(K, dtype=bool)
    interior = np.zeros(grid.shape, dtype=bool)
    interior[1:-1, 1:-1] = K[:-1, :-1] & K[:-1, 1:] & K[1:, :-1] & K[1:, 1:]
    X, Y = grid.nodes()
    cand = np.argwhere(interior)
    if cand.size == 0:
        raise ValueError("K has no interior nodes")
    span = min(grid.x1 - grid.x0, grid.y1 - grid.y0)
    rlo, rhi = radius_range or (4 * grid.h, max(0.25 * span, 5 * grid.h))
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 100 * n:
            raise RuntimeError("could not place competitor bumps inside K")
        j, i = cand[rng.integers(len(cand))]
        rad = float(rng.uniform(rlo, rhi))
        amp = float(rng.choice(amplitudes)) * float(rng.choice([-1.0, 1.0]))
        eta = TestFunction((float(X[j, i]), float(Y[j, i])), rad)
        bump = eta.value(X, Y)
        if ((bump > 0) & ~interior).any():
            continue
        label = f"bump(c=({X[j, i]:.4g},{Y[j, i]:.4g}),r={rad:.4g},a={amp:+g})"
        out.append((label, ScalarField(grid, w.values + amp * bump)))
    return out

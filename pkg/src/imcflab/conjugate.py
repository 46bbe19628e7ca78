"""Conjugate stream function v_p, the log transform w_p and the flux F_p.

The solver's Euler-Lagrange equations say that the edge fluxes
``a_e (u_m - u_n)`` with conductance ``a_e = (s_1^{p/2-1} + s_2^{p/2-1}) / 2``
(the two cells sharing the edge) sum to zero around every free node.  Rotated
by a quarter turn they are the increments of a potential on the dual lattice
of cell centres, so v is obtained by summing them along a spanning tree; the
circulation around each node is the discrete curl and is checked, not assumed.

Magnitudes reach exp(+-80) at p = 64, so v is stored as ``v_scaled`` with
``v = v_scaled * exp(log_scale)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridError, ScalarField, TestFunction, VectorField, bilinear, gradient, perp
from .plaplace import PExponent, as_exponent, edge_log_s


class ConjugateError(ValueError):
    pass


@dataclass
class ConjugatePair:
    u: ScalarField
    v_scaled: ScalarField     # v * exp(-log_scale) at nodes; placeholder where not valid
    log_scale: float
    p: PExponent
    gamma: float
    anchor: tuple[float, float]
    omega: int
    valid: np.ndarray         # nodes enclosed by four cells of cell_mask
    cell_mask: np.ndarray
    cell_v_scaled: np.ndarray  # dual-lattice values at cell centres
    curl_residual: float

    @property
    def v(self) -> ScalarField:
        """Unscaled v; raises OverflowError when it is not representable."""
        if abs(self.log_scale) > 700:
            raise OverflowError(f"v spans exp({self.log_scale:.1f}); use v_scaled and log_scale")
        return ScalarField(self.u.grid, self.v_scaled.values * math.exp(self.log_scale))

    def log_v(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(self.v_scaled.values) + self.log_scale
        out[~self.valid] = np.nan
        return out

    def value_at(self, x: float, y: float) -> float:
        """v at a point by bilinear interpolation (log scale undone)."""
        g = self.u.grid
        vs = float(bilinear(self.v_scaled.values, g.x0, g.y0, g.h, x, y))
        return vs * math.exp(self.log_scale)

    def log_value_at(self, x: float, y: float) -> float:
        g = self.u.grid
        vs = float(bilinear(self.v_scaled.values, g.x0, g.y0, g.h, x, y))
        return math.log(vs) + self.log_scale if vs > 0 else -math.inf


def _log_weights(u: ScalarField, p: float, epsilon: float) -> np.ndarray:
    _, logs = edge_log_s(u.values, u.grid, epsilon)
    logs = logs.reshape(u.grid.cell_shape)
    if p == 2:
        return np.zeros_like(logs)
    return (0.5 * p - 1.0) * logs   # -inf where s = 0: weight 0


def dual_increments(u: ScalarField, p: float, omega: int, epsilon: float, cell_mask: np.ndarray):
    """Scaled increments of v between neighbouring cell centres.

    dx[j, i]: from cell (i, j) to (i+1, j); dy[j, i]: from (i, j) to (i, j+1).
    Returns (dx, dy, log_scale).
    """
    lw = _log_weights(u, p, epsilon)
    finite = lw[cell_mask & np.isfinite(lw)]
    c = float(finite.max()) if finite.size else 0.0
    w = np.where(np.isfinite(lw) & cell_mask, np.exp(np.minimum(lw - c, 0.0)), 0.0)
    U = u.values
    ax = 0.5 * (w[:, :-1] + w[:, 1:])
    ay = 0.5 * (w[:-1, :] + w[1:, :])
    # crossing the vertical edge at node column i+1 (upward along it)
    dx = -omega * ax * (U[1:, 1:-1] - U[:-1, 1:-1])
    # crossing the horizontal edge at node row j+1 (rightward along it)
    dy = omega * ay * (U[1:-1, 1:] - U[1:-1, :-1])
    return dx, dy, c


def curl_residual(dx: np.ndarray, dy: np.ndarray, cell_mask: np.ndarray) -> float:
    """Max relative circulation of the increments around nodes enclosed by cell_mask."""
    m = cell_mask
    enclosed = m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]
    if not enclosed.any():
        return 0.0
    a = dx[:-1, :]      # (j-1, i-1) -> (j-1, i), below the node
    b = dy[:, 1:]       # (j-1, i) -> (j, i), right of the node
    c = dx[1:, :]       # (j, i-1) -> (j, i), above
    d = dy[:, :-1]      # (j-1, i-1) -> (j, i-1), left
    circ = a + b - c - d
    tot = np.abs(a) + np.abs(b) + np.abs(c) + np.abs(d)
    rel = np.where(tot > 0, np.abs(circ) / np.where(tot > 0, tot, 1.0), 0.0)
    return float(rel[enclosed].max())


def _integrate_tree(dx: np.ndarray, dy: np.ndarray, mask: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Sum increments along the anchor row, then up and down every column.

    Monotone fields keep the partial sums free of cancellation this way.
    Returns cell values (nan where the tree does not reach).
    """
    ny, nx = mask.shape
    ja, ia = start
    V = np.full(mask.shape, np.nan)
    row = mask[ja]
    lo = ia
    while lo > 0 and row[lo - 1]:
        lo -= 1
    hi = ia
    while hi < nx - 1 and row[hi + 1]:
        hi += 1
    V[ja, ia] = 0.0
    if hi > ia:
        V[ja, ia + 1:hi + 1] = np.cumsum(dx[ja, ia:hi])
    if lo < ia:
        V[ja, lo:ia] = -np.cumsum(dx[ja, lo:ia][::-1])[::-1]
    for i in range(lo, hi + 1):
        col = mask[:, i]
        top = ja
        while top < ny - 1 and col[top + 1]:
            top += 1
        bot = ja
        while bot > 0 and col[bot - 1]:
            bot -= 1
        if top > ja:
            V[ja + 1:top + 1, i] = V[ja, i] + np.cumsum(dy[ja:top, i])
        if bot < ja:
            V[bot:ja, i] = V[ja, i] - np.cumsum(dy[bot:ja, i][::-1])[::-1]
    return V


def conjugate(u: ScalarField, p, gamma: float = 0.5, anchor: tuple[float, float] = (-0.75, 0.0),
              omega: int = -1, epsilon: float = 0.0, cell_mask: np.ndarray | None = None,
              curl_tol: float = 1e-6) -> ConjugatePair:
    """v with grad v = omega |grad u|^{p-2} grad^perp u and v(anchor) = gamma^{p-1}.

    ``epsilon`` must match the regularisation of the solve that produced u, and
    ``cell_mask`` the region where u solved the equations (simply connected).
    """
    pe = as_exponent(p)
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if omega not in (-1, 1):
        raise ValueError("omega must be +1 or -1")
    grid = u.grid
    mask = np.ones(grid.cell_shape, dtype=bool) if cell_mask is None else np.asarray(cell_mask, dtype=bool)
    if mask.shape != grid.cell_shape:
        raise GridError("cell_mask has the wrong shape")
    ia = int(math.floor((anchor[0] - grid.x0) / grid.h))
    ja = int(math.floor((anchor[1] - grid.y0) / grid.h))
    if not (0 <= ia < grid.nx - 1 and 0 <= ja < grid.ny - 1) or not mask[ja, ia]:
        raise ConjugateError(f"anchor {anchor} is not inside the conjugate region")
    dx, dy, c = dual_increments(u, pe.p, omega, epsilon, mask)
    curl = curl_residual(dx, dy, mask)
    if curl > curl_tol:
        raise ConjugateError(f"discrete curl residual {curl:.3e} exceeds {curl_tol:.1e}: "
                             "u does not solve the p-Laplace equations accurately enough")
    Vc = _integrate_tree(dx, dy, mask, (ja, ia))
    reached = np.isfinite(Vc)
    if (mask & ~reached).any():
        j, i = np.argwhere(mask & ~reached)[0]
        raise ConjugateError(f"cell ({i}, {j}) is not reachable along rows and columns from the anchor")
    # nodal values: mean of the adjacent cells of the region
    cnt = np.zeros(grid.shape)
    acc = np.zeros(grid.shape)
    Vz = np.where(mask, Vc, 0.0)
    m = mask.astype(float)
    for sj, si in ((slice(None, -1), slice(None, -1)), (slice(None, -1), slice(1, None)),
                   (slice(1, None), slice(None, -1)), (slice(1, None), slice(1, None))):
        acc[sj, si] += Vz
        cnt[sj, si] += m
    # only nodes enclosed by four region cells: a one-sided mean is off by h/2
    valid = cnt == 4
    vn = np.where(valid, acc / 4.0, 0.0)
    target = math.exp((pe.p - 1) * math.log(gamma) - c)
    at = float(bilinear(vn, grid.x0, grid.y0, grid.h, anchor[0], anchor[1]))
    shift = target - at
    vn = np.where(valid, vn + shift, target)
    Vc = np.where(mask, Vc + shift, np.nan)
    return ConjugatePair(u, ScalarField(grid, vn), c, pe, gamma, (float(anchor[0]), float(anchor[1])),
                         omega, valid, mask, Vc, curl)


# ------------------------------------------------------------------ transform


@dataclass
class TransformedField:
    w: ScalarField            # 0 where undefined
    F: VectorField            # 0 on cells without four defined corners
    p: PExponent
    defined: np.ndarray       # nodes where v > 0
    cell_defined: np.ndarray


def log_transform(pair: ConjugatePair, region: np.ndarray | None = None) -> TransformedField:
    """w = log(v)/(1-p) and F = -omega (p-1)^{-1/(p-1)} e^w grad^perp u.

    ``region`` is a node mask where v must be positive; a nonpositive value
    there is an error naming the nodes.  Elsewhere w is simply left undefined
    where v <= 0 (see ``defined``).
    """
    pe = pair.p
    grid = pair.u.grid
    vs = pair.v_scaled.values
    if region is not None:
        region = np.asarray(region, dtype=bool)
        outside = region & ~pair.valid
        if outside.any():
            j, i = np.argwhere(outside)[0]
            raise ConjugateError(f"region of interest leaves the conjugate region at node ({i}, {j})")
    else:
        region = np.zeros(grid.shape, dtype=bool)
    bad = region & ~(vs > 0)
    if bad.any():
        nodes = [(int(i), int(j)) for j, i in np.argwhere(bad)[:5]]
        raise ConjugateError(f"v <= 0 at {int(bad.sum())} node(s) of the region of interest, e.g. {nodes}")
    defined = pair.valid & (vs > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logv = np.where(defined, np.log(np.where(defined, vs, 1.0)) + pair.log_scale, 0.0)
    w = np.where(defined, logv / (1.0 - pe.p), 0.0)
    cd = defined[:-1, :-1] & defined[:-1, 1:] & defined[1:, :-1] & defined[1:, 1:]
    vc = 0.25 * (vs[:-1, :-1] + vs[:-1, 1:] + vs[1:, :-1] + vs[1:, 1:])
    cd &= vc > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ew = np.where(cd, (np.log(np.where(cd, vc, 1.0)) + pair.log_scale) / (1.0 - pe.p), 0.0)
    coef = -pair.omega * math.exp(-math.log(pe.p - 1.0) / (pe.p - 1.0)) if pe.p > 1 else 0.0
    amp = np.where(cd, coef * np.exp(np.minimum(log_ew, 700.0)), 0.0)
    gp = perp(gradient(pair.u)).values
    F = gp * amp[..., None]
    return TransformedField(ScalarField(grid, w), VectorField(grid, F), pe, defined, cd)


def direct_flux(t: TransformedField) -> np.ndarray:
    """|grad w|^{p'-2} grad w from the discrete gradient of w (0 where grad w = 0)."""
    G = gradient(t.w).values
    n = np.hypot(G[..., 0], G[..., 1])
    with np.errstate(divide="ignore"):
        fac = np.where(n > 0, n ** (t.p.p_conj - 2.0), 0.0)
    return G * fac[..., None]


def pprime_equation_residual(t: TransformedField, tests: list[TestFunction]) -> list[float]:
    """Weak form of Delta_{p'} w = |grad w|^{p'}: int |grad w|^{p'-2} grad w . grad eta + int eta |grad w|^{p'}."""
    grid = t.w.grid
    flux = direct_flux(t)
    G = gradient(t.w).values
    src = np.hypot(G[..., 0], G[..., 1]) ** t.p.p_conj
    X, Y = grid.centers()
    out = []
    for eta in tests:
        eta.check_inside(grid)
        sj, si = eta.bbox_cells(grid)
        if not t.cell_defined[sj, si].all():
            raise ConjugateError(f"test function {eta.label} reaches cells where w is undefined")
        ge = eta.gradient(X[sj, si], Y[sj, si])
        e = eta.value(X[sj, si], Y[sj, si])
        integrand = (flux[sj, si] * ge).sum(-1) + e * src[sj, si]
        out.append(float(math.fsum(integrand.ravel()) * grid.h ** 2))
    return out


def duality_residual_L1(pair: ConjugatePair, cells: np.ndarray | None = None) -> float:
    """int | |grad v|^{p'-2} grad v - omega grad^perp u | over cells (scaled out of log space)."""
    grid = pair.u.grid
    Gv = gradient(pair.v_scaled).values
    n = np.hypot(Gv[..., 0], Gv[..., 1])
    pc = pair.p.p_conj
    # |grad v|^{p'-1} = |grad v_s|^{p'-1} e^{c (p'-1)}
    with np.errstate(divide="ignore"):
        lf = np.where(n > 0, (pc - 2.0) * np.log(np.where(n > 0, n, 1.0)), -np.inf) + pair.log_scale * (pc - 1.0)
    flux = Gv * np.exp(np.minimum(lf, 700.0))[..., None]
    target = pair.omega * perp(gradient(pair.u)).values
    err = np.hypot(*(flux - target).transpose(2, 0, 1))
    sel = pair.cell_mask if cells is None else cells & pair.cell_mask
    # drop cells touching invalid nodes (their nodal v is a placeholder)
    vmask = pair.valid
    full = vmask[:-1, :-1] & vmask[:-1, 1:] & vmask[1:, :-1] & vmask[1:, 1:]
    return float(math.fsum(err[sel & full].ravel()) * grid.h ** 2)

"""Streamlines, level curves, orientation detection and the level-set family M."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .grid import Grid2D, GridError, ScalarField, bilinear, gradient

GRAD_FLOOR = 1e-8


class TraceError(RuntimeError):
    pass


@dataclass
class StreamlinePath:
    points: np.ndarray            # (n, 2)
    grad_norm_along: np.ndarray   # (n,)
    arclength: np.ndarray         # (n,)
    truncated: bool = False       # stopped at a (near) critical point
    reason: str = ""

    @property
    def relative_variation(self) -> float:
        g = self.grad_norm_along
        return float((g.max() - g.min()) / g.mean())


def _cell_gradient(u: ScalarField) -> np.ndarray:
    return gradient(u).values


def _grad_at(G: np.ndarray, grid: Grid2D, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of cell-centred gradients."""
    h = grid.h
    return bilinear(G, grid.x0 + 0.5 * h, grid.y0 + 0.5 * h, h, pts[..., 0], pts[..., 1])


def _inside(grid: Grid2D, pts: np.ndarray, margin: float) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    return ((x >= grid.x0 + margin) & (x <= grid.x1 - margin)
            & (y >= grid.y0 + margin) & (y <= grid.y1 - margin))


def trace_streamline(u: ScalarField, start, step: float, max_len: float, margin: float | None = None,
                     direction: int = 1, region: Callable | None = None) -> StreamlinePath:
    """RK4 on gamma' = grad u / |grad u| (or its negative for ``direction=-1``).

    Stops at the margin, at ``max_len``, outside ``region(x, y)`` if given, or
    where |grad u| drops below 1e-8 (then ``truncated`` is set).
    """
    if step <= 0 or max_len <= 0:
        raise ValueError("step and max_len must be positive")
    grid = u.grid
    margin = grid.h if margin is None else margin
    G = _cell_gradient(u)

    def inside(p):
        ok = bool(_inside(grid, p, margin))
        return ok and (region is None or bool(region(p[0], p[1])))

    def field(p):
        g = _grad_at(G, grid, p)
        n = math.hypot(g[0], g[1])
        if n < GRAD_FLOOR:
            raise _Critical(n)
        return direction * g / n

    p = np.asarray(start, dtype=float)
    if not inside(p):
        raise ValueError(f"start point {tuple(p)} is outside the tracing region")
    g0 = _grad_at(G, grid, p)
    if math.hypot(*g0) < GRAD_FLOOR:
        raise ValueError("gradient vanishes at the start point")
    pts = [p]
    norms = [math.hypot(*g0)]
    s = [0.0]
    truncated, reason = False, "max_len"
    while s[-1] < max_len:
        hstep = min(step, max_len - s[-1])
        try:
            k1 = field(p)
            k2 = field(p + 0.5 * hstep * k1)
            k3 = field(p + 0.5 * hstep * k2)
            k4 = field(p + hstep * k3)
        except _Critical:
            truncated, reason = True, "gradient below 1e-8"
            break
        q = p + hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not inside(q):
            reason = "boundary"
            break
        gq = _grad_at(G, grid, q)
        nq = math.hypot(*gq)
        if nq < GRAD_FLOOR:
            truncated, reason = True, "gradient below 1e-8"
            break
        s.append(s[-1] + float(np.hypot(*(q - p))))
        p = q
        pts.append(p)
        norms.append(nq)
    return StreamlinePath(np.array(pts), np.array(norms), np.array(s), truncated, reason)


class _Critical(Exception):
    pass


# ------------------------------------------------------------------ level curves


def _bilinear_with_grad(u: ScalarField, pts: np.ndarray):
    """Value and exact gradient of the bilinear interpolant at points (n, 2)."""
    g = u.grid
    v = u.values
    fx = (pts[..., 0] - g.x0) / g.h
    fy = (pts[..., 1] - g.y0) / g.h
    i = np.clip(np.floor(fx).astype(int), 0, g.nx - 2)
    j = np.clip(np.floor(fy).astype(int), 0, g.ny - 2)
    tx, ty = fx - i, fy - j
    u00, u10, u01, u11 = v[j, i], v[j, i + 1], v[j + 1, i], v[j + 1, i + 1]
    val = (1 - tx) * (1 - ty) * u00 + tx * (1 - ty) * u10 + (1 - tx) * ty * u01 + tx * ty * u11
    gx = ((1 - ty) * (u10 - u00) + ty * (u11 - u01)) / g.h
    gy = ((1 - tx) * (u01 - u00) + tx * (u11 - u10)) / g.h
    return val, np.stack([gx, gy], axis=-1)


def _project(u: ScalarField, pts: np.ndarray, level, tol: float, iters: int = 20):
    """Newton along the gradient onto {u = level}; returns points and a converged mask."""
    pts = pts.copy()
    level = np.broadcast_to(level, pts.shape[:-1])
    ok = np.zeros(pts.shape[:-1], dtype=bool)
    for _ in range(iters):
        val, g = _bilinear_with_grad(u, pts)
        err = val - level
        ok = np.abs(err) <= tol
        if ok.all():
            break
        n2 = np.maximum((g * g).sum(-1), 1e-300)
        upd = ~ok
        pts[upd] -= (err[upd] / n2[upd])[:, None] * g[upd]
    val, _ = _bilinear_with_grad(u, pts)
    ok = np.abs(val - level) <= tol
    return pts, ok


@dataclass
class LevelCurve:
    points: np.ndarray
    level: float
    closed: bool = False


def trace_level_set(u: ScalarField, level: float, seed, step: float | None = None,
                    margin: float | None = None, max_len: float | None = None) -> LevelCurve:
    """Predictor along grad^perp u, Newton corrector back onto the level; both directions from the seed.

    The curve is oriented along grad^perp u at the seed.  At the domain edge
    the last segment is clipped to the boundary.
    """
    grid = u.grid
    step = grid.h / 2 if step is None else step
    margin = 0.0 if margin is None else margin
    max_len = 4 * ((grid.x1 - grid.x0) + (grid.y1 - grid.y0)) if max_len is None else max_len
    scale = max(float(np.ptp(u.values)), 1.0)
    tol = 1e-12 * scale
    p0, ok = _project(u, np.asarray(seed, dtype=float)[None, :], level, tol)
    if not ok[0]:
        raise TraceError(f"corrector did not reach level {level} from seed {tuple(seed)} in 20 steps")
    p0 = p0[0]
    if not _inside(grid, p0, margin):
        raise TraceError("projected seed lies outside the domain")
    branches = []
    closed = False
    for sgn in (1.0, -1.0):
        pts = [p0]
        _, g = _bilinear_with_grad(u, p0[None, :])
        t_prev = sgn * np.array([-g[0, 1], g[0, 0]])
        length = 0.0
        while length < max_len:
            p = pts[-1]
            _, g = _bilinear_with_grad(u, p[None, :])
            gn = float(np.hypot(*g[0]))
            if gn < GRAD_FLOOR:
                raise TraceError(f"gradient below 1e-8 on the level curve at {tuple(p)}")
            t = np.array([-g[0, 1], g[0, 0]]) / gn
            if t @ t_prev < 0:
                t = -t
            q, okq = _project(u, (p + step * t)[None, :], level, tol)
            if not okq[0]:
                raise TraceError(f"corrector failed to converge in 20 steps near {tuple(p)}")
            q = q[0]
            if not _inside(grid, q, margin):
                c = _clip(grid, p, q, margin)
                if np.hypot(*(c - p)) > 1e-12 * step:
                    pts.append(c)
                break
            length += float(np.hypot(*(q - p)))
            t_prev = q - p
            pts.append(q)
            if sgn > 0 and len(pts) > 3 and np.hypot(*(q - p0)) < 0.75 * step:
                closed = True
                break
        branches.append(np.array(pts))
        if closed:
            break
    if closed:
        return LevelCurve(branches[0], level, True)
    fwd, bwd = branches
    return LevelCurve(np.vstack([bwd[::-1], fwd[1:]]), level, False)


def _clip(grid: Grid2D, p: np.ndarray, q: np.ndarray, margin: float) -> np.ndarray:
    lo = np.array([grid.x0 + margin, grid.y0 + margin])
    hi = np.array([grid.x1 - margin, grid.y1 - margin])
    d = q - p
    t = 1.0
    for k in range(2):
        if d[k] > 0 and q[k] > hi[k]:
            t = min(t, (hi[k] - p[k]) / d[k])
        elif d[k] < 0 and q[k] < lo[k]:
            t = min(t, (lo[k] - p[k]) / d[k])
    return p + max(t, 0.0) * d


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return float(max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0]))


def densify(poly: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline so consecutive points are at most ``spacing`` apart."""
    out = [poly[0]]
    for p, q in zip(poly[:-1], poly[1:]):
        n = max(int(math.ceil(np.hypot(*(q - p)) / spacing)), 1)
        for k in range(1, n + 1):
            out.append(p + (q - p) * k / n)
    return np.array(out)


# ------------------------------------------------------------------ orientation


@dataclass
class OrientationField:
    omega: np.ndarray       # int8 node array, 0 where undefined
    defined: np.ndarray
    tied: np.ndarray | None = None   # flat profiles, +1 by tie-break


def detect_orientation(u: ScalarField, grad_norm: ScalarField, r: float, slack: float = 1e-6,
                       nodes: np.ndarray | None = None, samples: int = 8) -> OrientationField:
    """Probe |grad u| along the level curve through each node for arclength r on both sides.

    omega = +1 if g is nondecreasing in the grad^perp u direction (within
    ``slack`` per sample), -1 if nonincreasing, undefined otherwise; flat
    profiles get +1.  All probes advance together.
    """
    grid = u.grid
    if r < 2 * grid.h:
        raise ValueError(f"probe radius r={r} is below 2h={2 * grid.h}")
    if grad_norm.grid != grid:
        raise GridError("grad_norm lives on a different grid")
    X, Y = grid.nodes()
    want = np.ones(grid.shape, dtype=bool) if nodes is None else np.asarray(nodes, dtype=bool)
    idx = np.flatnonzero(want.ravel())
    P0 = np.stack([X.ravel()[idx], Y.ravel()[idx]], axis=-1)
    level = u.values.ravel()[idx]
    scale = max(float(np.ptp(u.values)), 1.0)
    tol = 1e-12 * scale
    _, g0 = _bilinear_with_grad(u, P0)
    n0 = np.hypot(g0[:, 0], g0[:, 1])
    alive = n0 >= GRAD_FLOOR
    tang0 = np.stack([-g0[:, 1], g0[:, 0]], -1) / np.maximum(n0, 1e-300)[:, None]
    step = r / samples

    def gval(pts):
        return bilinear(grad_norm.values, grid.x0, grid.y0, grid.h, pts[:, 0], pts[:, 1])

    profile = np.zeros((idx.size, 2 * samples + 1))
    profile[:, samples] = gval(P0)
    for sgn in (1.0, -1.0):
        p = P0.copy()
        t_prev = sgn * tang0
        # a probe that reaches the grid edge keeps its last value: the
        # definition only needs some ball, and B_r(x) may be cut by the boundary
        moving = alive.copy()
        for k in range(1, samples + 1):
            _, g = _bilinear_with_grad(u, p)
            gn = np.hypot(g[:, 0], g[:, 1])
            alive &= ~moving | (gn >= GRAD_FLOOR)
            t = np.stack([-g[:, 1], g[:, 0]], -1) / np.maximum(gn, 1e-300)[:, None]
            flip = (t * t_prev).sum(-1) < 0
            t[flip] *= -1
            q, ok = _project(u, p + step * t, level, tol)
            alive &= ~moving | ok
            moving &= ok & _inside(grid, q, 0.0)
            t_prev = np.where(moving[:, None], q - p, t_prev)
            p = np.where(moving[:, None], q, p)
            col = samples + int(sgn) * k
            profile[:, col] = np.where(moving, gval(p), profile[:, col - int(sgn)])
    d = np.diff(profile, axis=1)
    up = (d >= -slack).all(axis=1)
    down = (d <= slack).all(axis=1)
    om = np.where(up, 1, np.where(down, -1, 0)).astype(np.int8)
    om[~alive] = 0
    omega = np.zeros(grid.shape, dtype=np.int8)
    omega.ravel()[idx] = om
    tied = np.zeros(grid.shape, dtype=bool)
    tied.ravel()[idx] = up & down & alive
    _enforce_continuity(omega)
    return OrientationField(omega, omega != 0, tied & (omega != 0))


def _enforce_continuity(omega: np.ndarray) -> None:
    """Undefine nodes with an opposite-sign 4-neighbour until none remain."""
    while True:
        bad = np.zeros(omega.shape, dtype=bool)
        prod_x = omega[:, 1:].astype(int) * omega[:, :-1]
        prod_y = omega[1:, :].astype(int) * omega[:-1, :]
        bad[:, 1:] |= prod_x < 0
        bad[:, :-1] |= prod_x < 0
        bad[1:, :] |= prod_y < 0
        bad[:-1, :] |= prod_y < 0
        if not bad.any():
            return
        omega[bad] = 0


# ------------------------------------------------------------------ level family


@dataclass
class LevelSetFamily:
    t_values: np.ndarray
    curves: list[np.ndarray]
    m_t: np.ndarray
    M_mask: np.ndarray
    lipschitz: float                  # largest observed slope of the L_t graphs
    lipschitz_bound: float
    levels: np.ndarray = field(repr=False, default=None)


def build_level_family(u: ScalarField, m: Callable[[float], float], delta: float = 0.05, sigma: float = 0.5,
                       t_values: Sequence[float] | None = None) -> LevelSetFamily:
    """Trace L_t = {u = u(0, t)} for t in [-1/2, 1/2] and rasterise M = U_t {x in L_t : x1 <= m_t}."""
    grid = u.grid
    G = gradient(u).values
    dev = np.hypot(G[..., 0], G[..., 1] - 1.0)
    if dev.max() > delta:
        j, i = np.unravel_index(int(np.argmax(dev)), dev.shape)
        raise GridError(f"gradient pinch |grad u - e2| <= {delta} violated in cell ({i}, {j}): {dev.max():.4g}")
    if t_values is None:
        t_values = np.linspace(-0.5, 0.5, 33)
    ts = np.asarray(t_values, dtype=float)
    if ts.min() < -0.5 or ts.max() > 0.5 or np.any(np.diff(ts) <= 0):
        raise ValueError("t values must increase within [-1/2, 1/2]")
    mt = np.array([float(m(t)) for t in ts])
    if np.any(mt < -1) or np.any(mt > 1):
        raise ValueError("m_t must lie in [-1, 1]")
    levels = u.interpolate(np.zeros_like(ts), ts)
    curves, slope = [], 0.0
    for lev, t in zip(levels, ts):
        c = trace_level_set(u, float(lev), (0.0, float(t))).points
        dx = np.diff(c[:, 0])
        dy = np.diff(c[:, 1])
        if np.any(dx <= 0) and np.any(dx >= 0):
            raise GridError(f"L_t at t={t} is not a graph over the x1-axis")
        slope = max(slope, float(np.max(np.abs(dy / dx))))
        curves.append(c)
    # a cell centre belongs to M when its level maps to some t with x1 <= m_t
    Xc, Yc = grid.centers()
    uc = u.interpolate(Xc, Yc)
    inrange = (uc >= levels[0]) & (uc <= levels[-1])
    tc = np.interp(uc, levels, ts)
    mc = np.interp(tc, ts, mt)
    M = inrange & (Xc <= mc)
    bound = delta / math.sqrt((1 - sigma) ** 2 - delta ** 2)
    return LevelSetFamily(ts, curves, mt, M, slope, bound, levels)


# ------------------------------------------------------------------ CSV


def paths_csv(paths: Sequence[StreamlinePath] | Sequence[np.ndarray], grad_norm: ScalarField | None = None) -> str:
    lines = ["path_id,s,x,y,grad_norm"]
    for k, p in enumerate(paths):
        if isinstance(p, StreamlinePath):
            pts, s, g = p.points, p.arclength, p.grad_norm_along
        else:
            pts = np.asarray(p)
            s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
            g = grad_norm.interpolate(pts[:, 0], pts[:, 1]) if grad_norm is not None else np.full(len(pts), np.nan)
        for sv, (x, y), gv in zip(s, pts, g):
            lines.append(f"{k},{sv:.17g},{x:.17g},{y:.17g},{gv:.17g}")
    return "\n".join(lines) + "\n"


def write_paths(path: str | Path, paths, grad_norm: ScalarField | None = None) -> None:
    Path(path).write_text(paths_csv(paths, grad_norm))

"""Regularised p-Dirichlet energy minimisation with continuation in p.

The cell energy density is ``(1/p) (|grad u|^2 + eps^2)^(p/2)`` where the
squared gradient of a cell is the mean of the squared one-sided differences
along its four edges.  At p = 2 this reproduces the 5-point Laplacian, and
the resulting Euler-Lagrange equations are a weighted graph Laplacian whose
edge fluxes are exactly conservative at every free node (the conjugate
construction relies on that).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import distance_transform_edt
from scipy.special import logsumexp

from .grid import Grid2D, GridError, ScalarField, gradient

logger = logging.getLogger(__name__)

LOG_CLAMP = 700.0


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PExponent:
    p: float
    p_conj: float

    def __post_init__(self) -> None:
        if not (self.p >= 2 and math.isfinite(self.p)):
            raise ValueError(f"p must be >= 2, got {self.p}")
        if abs(1.0 / self.p + 1.0 / self.p_conj - 1.0) > 1e-12:
            raise ValueError(f"{self.p_conj} is not the conjugate exponent of {self.p}")

    @classmethod
    def of(cls, p: float) -> "PExponent":
        p = float(p)
        return cls(p, p / (p - 1.0))


def as_exponent(p) -> PExponent:
    return p if isinstance(p, PExponent) else PExponent.of(p)


@dataclass
class DirichletProblem:
    """Nodal data plus the mask of free (unknown) nodes.

    Every node outside ``free`` carries its prescribed value; free entries of
    ``values`` are only the initial guess.
    """

    grid: Grid2D
    values: np.ndarray
    free: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape).copy()
        self.free = np.asarray(self.free, dtype=bool).reshape(self.grid.shape).copy()
        if not np.isfinite(self.values[~self.free]).all():
            raise GridError("boundary values must be finite")
        if (self.free & self.grid.boundary_mask()).any():
            raise GridError("grid-boundary nodes cannot be free")
        if not self.free.any():
            raise GridError("problem has no free nodes")
        self.values[self.free & ~np.isfinite(self.values)] = 0.0

    @classmethod
    def from_function(cls, grid: Grid2D, fn, free: np.ndarray | None = None) -> "DirichletProblem":
        X, Y = grid.nodes()
        vals = np.broadcast_to(fn(X, Y), grid.shape).astype(float)
        if free is None:
            free = ~grid.boundary_mask()
        return cls(grid, vals, free)

    @property
    def active_cells(self) -> np.ndarray:
        f = self.free
        return f[:-1, :-1] | f[:-1, 1:] | f[1:, :-1] | f[1:, 1:]

    def distance_to_boundary(self) -> np.ndarray:
        """Distance from each cell centre to the nearest prescribed node."""
        g = self.grid
        if np.array_equal(self.free, ~g.boundary_mask()):
            X, Y = g.centers()
            return np.minimum.reduce([X - g.x0, g.x1 - X, Y - g.y0, g.y1 - Y])
        d = distance_transform_edt(self.free) * g.h
        return 0.25 * (d[:-1, :-1] + d[:-1, 1:] + d[1:, :-1] + d[1:, 1:])


@dataclass
class SolveParams:
    continuation: list[tuple[float, float]]
    tol: float = 1e-9
    max_iters: int = 60

    def __post_init__(self) -> None:
        if not self.continuation:
            raise ValueError("continuation needs at least one (p, epsilon) stage")
        if not self.tol > 0 or self.max_iters < 1:
            raise ValueError("tol must be > 0 and max_iters >= 1")
        prev_p, prev_eps = -math.inf, math.inf
        for p, eps in self.continuation:
            if p < 2 or eps < 0:
                raise ValueError(f"bad stage (p={p}, epsilon={eps})")
            if p < prev_p:
                raise ValueError("continuation p values must be nondecreasing")
            if p == prev_p and eps > prev_eps:
                raise ValueError("epsilon must be nonincreasing within a p level")
            prev_p, prev_eps = p, eps


def default_schedule(p_values: Sequence[float] = (2, 4, 8, 16, 32, 64), eps_min: float = 0.0,
                     eps_scale: float = 10.0) -> list[tuple[float, float]]:
    """Per p: a regularised stage at eps = max(eps_min, eps_scale/p), then eps_min."""
    stages: list[tuple[float, float]] = []
    for p in p_values:
        if p == 2:
            stages.append((2.0, eps_min))
            continue
        eps = max(eps_min, eps_scale / p)
        stages.append((float(p), eps))
        if eps > eps_min:
            stages.append((float(p), eps_min))
    return stages


@dataclass
class StageRecord:
    stage: int
    p: float
    epsilon: float
    iterations: int
    energy: float
    residual: float
    converged: bool


@dataclass
class SolveResult:
    u: ScalarField
    energy: float
    residual: float
    iterations: int
    converged: bool
    p: float = 2.0
    epsilon: float = 0.0
    problem: DirichletProblem | None = field(default=None, repr=False)
    stages: list[StageRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.energy) and self.energy >= 0):
            raise SolverError(f"energy must be finite and nonnegative, got {self.energy}")


# ----------------------------------------------------------- discretisation


class _Operators:
    """Sparse one-sided edge differences (cells x nodes), one per cell edge."""

    def __init__(self, grid: Grid2D):
        ny, nx = grid.shape
        cj, ci = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
        cell = (cj * (nx - 1) + ci).ravel()
        node = lambda j, i: (j * nx + i).ravel()  # noqa: E731
        nc, nn = (nx - 1) * (ny - 1), nx * ny
        h = grid.h

        def diff(a, b):
            rows = np.concatenate([cell, cell])
            cols = np.concatenate([b, a])
            data = np.concatenate([np.full(cell.size, 1.0 / h), np.full(cell.size, -1.0 / h)])
            return sp.csr_matrix((data, (rows, cols)), shape=(nc, nn))

        self.D = [
            diff(node(cj, ci), node(cj, ci + 1)),          # bottom edge, x-difference
            diff(node(cj + 1, ci), node(cj + 1, ci + 1)),  # top edge
            diff(node(cj, ci), node(cj + 1, ci)),          # left edge, y-difference
            diff(node(cj, ci + 1), node(cj + 1, ci + 1)),  # right edge
        ]
        self.grid = grid

    def diffs(self, u: np.ndarray) -> list[np.ndarray]:
        flat = u.ravel()
        return [D @ flat for D in self.D]


_OPS_CACHE: dict[Grid2D, _Operators] = {}


def operators(grid: Grid2D) -> _Operators:
    ops = _OPS_CACHE.get(grid)
    if ops is None:
        if len(_OPS_CACHE) > 8:
            _OPS_CACHE.clear()
        ops = _OPS_CACHE[grid] = _Operators(grid)
    return ops


def edge_log_s(u: np.ndarray, grid: Grid2D, epsilon: float) -> tuple[list[np.ndarray], np.ndarray]:
    """Edge differences and log of s = mean squared edge difference + eps^2, per cell."""
    d = operators(grid).diffs(u)
    s = 0.5 * sum(di * di for di in d) + epsilon ** 2
    with np.errstate(divide="ignore"):
        return d, np.log(s)


def _log_energy(logs: np.ndarray, p: float, h: float, cells: np.ndarray | None) -> float:
    """log of (1/p) * sum h^2 s^(p/2)."""
    v = 0.5 * p * logs
    if cells is not None:
        v = v[cells]
    if v.size == 0 or np.all(np.isneginf(v)):
        return -math.inf
    return float(logsumexp(v) + 2 * math.log(h) - math.log(p))


def energy(u: ScalarField, p, epsilon: float = 0.0, cells: np.ndarray | None = None) -> float:
    """(1/p * int (|grad u|^2 + eps^2)^(p/2))^(1/p), evaluated in log space."""
    pe = as_exponent(p)
    _, logs = edge_log_s(u.values, u.grid, epsilon)
    lE = _log_energy(logs, pe.p, u.grid.h, None if cells is None else cells.ravel())
    if lE == -math.inf:
        return 0.0
    out = lE / pe.p
    if out > LOG_CLAMP:
        raise OverflowError(f"energy overflows: log E_p = {out:.1f}")
    return math.exp(out)


class _Assembler:
    def __init__(self, problem: DirichletProblem, p: float, epsilon: float):
        self.problem = problem
        self.grid = problem.grid
        self.ops = operators(self.grid)
        self.p = p
        self.eps = epsilon
        self.free_idx = np.flatnonzero(problem.free.ravel())
        self.cells = problem.active_cells.ravel()
        self.h2 = self.grid.h ** 2

    def log_energy(self, u: np.ndarray) -> float:
        _, logs = edge_log_s(u, self.grid, self.eps)
        return _log_energy(logs, self.p, self.grid.h, self.cells)

    def scaled_energy(self, u: np.ndarray, shift: float) -> float:
        _, logs = edge_log_s(u, self.grid, self.eps)
        e = np.clip(0.5 * self.p * logs[self.cells] - shift, -np.inf, LOG_CLAMP)
        return float(math.fsum(np.exp(e)) * self.h2 / self.p)

    def weights(self, logs: np.ndarray, power: float, shift: float) -> np.ndarray:
        w = np.zeros_like(logs)
        if power == 0:
            w[self.cells] = math.exp(max(-shift, -LOG_CLAMP))
            return w
        # s = 0 cells: weight is the limit 0 for power > 0; for power < 0 the
        # weight only multiplies vanishing differences, so 0 is also right
        ok = np.isfinite(logs) & self.cells
        w[ok] = np.exp(np.clip(power * logs[ok] - shift, -np.inf, LOG_CLAMP))
        return w

    def gradient(self, u: np.ndarray):
        d, logs = edge_log_s(u, self.grid, self.eps)
        finite = logs[self.cells][np.isfinite(logs[self.cells])]
        shift = 0.5 * self.p * float(finite.max()) if finite.size else 0.0
        w1 = self.weights(logs, 0.5 * self.p - 1.0, shift)
        g = np.zeros(u.size)
        gabs = np.zeros(u.size)
        for D, di in zip(self.ops.D, d):
            g += D.T @ (w1 * di)
            gabs += abs(D).T @ np.abs(w1 * di)
        g *= 0.5 * self.h2
        gabs *= 0.5 * self.h2
        return d, logs, shift, w1, g, gabs

    def hessian(self, d, logs, shift, w1) -> sp.csr_matrix:
        D = self.ops.D
        H = sum(Dk.T @ sp.diags(w1) @ Dk for Dk in D)
        if self.p != 2:
            w2 = self.weights(logs, 0.5 * self.p - 2.0, shift)
            J = sum(sp.diags(dk) @ Dk for Dk, dk in zip(D, d))
            H = H + (0.5 * self.p - 1.0) * (J.T @ sp.diags(w2) @ J)
        return (0.5 * self.h2 * H).tocsr()

    def picard_matrix(self, w1) -> sp.csr_matrix:
        return (0.5 * self.h2 * sum(Dk.T @ sp.diags(w1) @ Dk for Dk in self.ops.D)).tocsr()


def _relative_residual(g: np.ndarray, gabs: np.ndarray, idx: np.ndarray) -> float:
    num = np.abs(g[idx])
    den = gabs[idx]
    rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(rel.max()) if rel.size else 0.0


def _solve_spd(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray | None:
    diag = A.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        return None
    s = 1.0 / np.sqrt(diag)
    S = sp.diags(s)
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            y = spla.spsolve((S @ A @ S).tocsc(), s * b)
        except (spla.MatrixRankWarning, RuntimeError):
            return None
    x = s * y
    if not np.all(np.isfinite(x)):
        return None
    return x


def _stage(problem: DirichletProblem, u: np.ndarray, p: float, eps: float, tol: float,
           max_iters: int) -> tuple[np.ndarray, int, float, bool]:
    asm = _Assembler(problem, p, eps)
    idx = asm.free_idx
    u = u.ravel().copy()
    residual = math.inf
    for it in range(max_iters + 1):
        d, logs, shift, w1, g, gabs = asm.gradient(u)
        residual = _relative_residual(g, gabs, idx)
        if residual <= tol:
            return u, it, residual, True
        if it == max_iters:
            break
        H = asm.hessian(d, logs, shift, w1)[idx][:, idx]
        step = _solve_spd(H, -g[idx])
        if step is None:
            logger.debug("singular Newton system at p=%g, taking a Picard step", p)
            A = asm.picard_matrix(w1)
            rhs = -(A[idx] @ u)
            # Picard: A_ff u_f = -A_fb u_b, written as a correction
            step = _solve_spd(A[idx][:, idx], rhs)
            if step is None:
                raise SolverError("both Newton and Picard systems are singular")
        e0 = asm.scaled_energy(u, shift)
        slope = float(g[idx] @ step)
        if slope >= 0:
            step = -g[idx] / np.maximum(gabs[idx], 1e-300)
            slope = float(g[idx] @ step)
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = u.copy()
            trial[idx] += t * step
            e1 = asm.scaled_energy(trial, shift)
            if e1 <= e0 + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable decrease left; the iterate is as good as it gets
            break
        if e1 > e0 * (1 + 1e-12):
            raise SolverError("accepted step increased the energy")
        u = trial
    return u, min(it, max_iters), residual, residual <= tol


def solve(problem: DirichletProblem, params: SolveParams, warm_start: ScalarField | None = None) -> SolveResult:
    """Minimise the regularised p-energy stage by stage with damped Newton.

    Without a warm start the first stage must be p = 2.
    """
    if warm_start is None and params.continuation[0][0] != 2:
        raise ValueError("continuation must start at p = 2 unless a warm start is given")
    u = problem.values.copy()
    if warm_start is not None:
        u[problem.free] = warm_start.values[problem.free]
    records: list[StageRecord] = []
    total = 0
    res, conv = math.inf, False
    for k, (p, eps) in enumerate(params.continuation):
        u_flat, iters, res, conv = _stage(problem, u, p, eps, params.tol, params.max_iters)
        u = u_flat.reshape(problem.grid.shape)
        total += iters
        e = energy(ScalarField(problem.grid, u), p, eps, problem.active_cells)
        records.append(StageRecord(k, p, eps, iters, e, res, conv))
        logger.info("stage %d p=%g eps=%g iters=%d residual=%.3e", k, p, eps, iters, res)
    p, eps = params.continuation[-1]
    return SolveResult(ScalarField(problem.grid, u), records[-1].energy, res, total, conv, p, eps,
                       problem, records)


def sweep(problem: DirichletProblem, p_values: Sequence[float], eps_min: float = 0.0,
          tol: float = 1e-9, max_iters: int = 60) -> dict[float, SolveResult]:
    """Warm-started solves returning the converged field for every requested p."""
    out: dict[float, SolveResult] = {}
    current: ScalarField | None = None
    levels = sorted(set(float(p) for p in p_values))
    chain = [2.0] + [p for p in levels if p > 2] if levels[0] > 2 else levels
    for p in chain:
        params = SolveParams(default_schedule([p], eps_min), tol, max_iters)
        res = solve(problem, params, warm_start=current)
        current = res.u
        if p in levels:
            out[p] = res
    return out


def stage_csv(results: Sequence[SolveResult]) -> str:
    lines = ["stage,p,epsilon,iterations,energy,residual,converged"]
    k = 0
    for r in results:
        for s in r.stages:
            lines.append(f"{k},{s.p:.17g},{s.epsilon:.17g},{s.iterations},{s.energy:.17g},"
                         f"{s.residual:.17g},{str(s.converged).lower()}")
            k += 1
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ a-posteriori checks


def interior_sup_gradient_check(result: SolveResult, rho: float, p=None, C: float = 100.0,
                                n: int = 3) -> tuple[float, float]:
    """Interior gradient bound: (max |grad u| at distance > rho, (C p^(n/2+1)/rho^n)^(1/p) ||grad u||_p)."""
    pe = as_exponent(result.p if p is None else p)
    u = result.u
    problem = result.problem or DirichletProblem(u.grid, u.values, ~u.grid.boundary_mask())
    dist = problem.distance_to_boundary()
    cells = problem.active_cells
    inner = cells & (dist > rho)
    if not inner.any():
        raise ValueError(f"no cells farther than rho={rho} from the boundary")
    gn = gradient(u).norm
    lhs = float(gn[inner].max())
    with np.errstate(divide="ignore"):
        lg = np.log(gn[cells])
    if np.all(np.isneginf(lg)):
        return lhs, 0.0
    log_lp = (float(logsumexp(pe.p * lg)) + 2 * math.log(u.grid.h)) / pe.p
    log_rhs = (math.log(C) + (n / 2 + 1) * math.log(pe.p) - n * math.log(rho)) / pe.p + log_lp
    return lhs, math.exp(min(log_rhs, LOG_CLAMP))


def vertical_monotonicity_check(result: SolveResult, cells: np.ndarray | None = None) -> float:
    """Smallest cell value of du/dx2 over the solved region."""
    if cells is None:
        cells = result.problem.active_cells if result.problem is not None else None
    gy = gradient(result.u).values[..., 1]
    return float(gy[cells].min() if cells is not None else gy.min())

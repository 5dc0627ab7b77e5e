"""Implicit time-marching Newton solver for -u_t S_k(D^2 u) = psi(x, t, u).

Each level is a backward-Euler step: the unknowns are the interior values of
``u^m``, the backward difference ``(u^m - u^{m-1}) / tau`` stands in for u_t,
and D^2 u^m uses centered differences. Every non-interior node carries the
boundary data ``g(x, t_m)``.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull, QhullError

from . import expression as ex
from . import sigma as sc
from .errors import (ConeCollapseError, DomainError, ManufacturedProblemError,
                     NonconvergenceError, SafeguardError)
from .grid import Grid, SpaceTimeDomain, build_grid, gradient, hessian, stencil_offsets

log = logging.getLogger(__name__)

MAX_NEWTON = 50
MAX_HALVINGS = 40
RESIDUAL_TOL = 1e-10
CONE_TOL = sc.CLOSURE_TOL


@dataclass
class ProblemSpec:
    """One Dirichlet problem: order ``k``, source ``psi(x, t, z)``, data ``g(x, t)``."""
    k: int
    psi: ex.Expr
    g: ex.Expr
    m1_floor: float
    psi_z: ex.Expr = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.psi, str):
            self.psi = ex.parse_expression(self.psi)
        if isinstance(self.g, str):
            self.g = ex.parse_expression(self.g)
        if not self.m1_floor > 0:
            raise DomainError("m1_floor must be positive")
        if "z" in self.g.variables():
            raise DomainError("boundary data may not depend on z")
        self.psi_z = self.psi.diff("z")

    def psi_at(self, x, t, z):
        return ex.evaluate_on(self.psi, x, t, z)

    def psi_z_at(self, x, t, z):
        return ex.evaluate_on(self.psi_z, x, t, z)

    def g_at(self, x, t):
        return ex.evaluate_on(self.g, x, t)


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list
    halvings: list


@dataclass
class SolutionField:
    """Values ``u[level, *lattice]`` plus derived difference quotients."""
    grid: Grid
    u: np.ndarray
    k: int | None = None
    newton: list = field(default_factory=list, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def hessian(self, level: int) -> np.ndarray:
        key = ("D2", level)
        if key not in self._cache:
            self._cache[key] = hessian(self.u[level], self.grid.h)
        return self._cache[key]

    def gradient(self, level: int) -> np.ndarray:
        key = ("D1", level)
        if key not in self._cache:
            self._cache[key] = gradient(self.u[level], self.grid.h)
        return self._cache[key]

    def ut(self, level: int) -> np.ndarray:
        if level < 1:
            raise DomainError("u_t needs a previous level")
        return (self.u[level] - self.u[level - 1]) / self.grid.tau

    def cone_margin(self, level: int, k: int | None = None) -> np.ndarray:
        """min_{j<=k} S_j(D^2 u) at interior nodes (NaN elsewhere)."""
        k = k or self.k
        out = np.full(self.grid.lattice_shape, np.nan)
        mask = self.grid.interior[level]
        H = self.hessian(level)[mask]
        out[mask] = np.min(sc.s_k_all(H, k)[:, 1:], axis=1)
        return out

    def invalidate(self):
        self._cache.clear()


# --------------------------------------------------------------------------
# residual and Jacobian on one level


def _slice_residual(u_now, u_prev, grid, spec, level, mask):
    H = hessian(u_now, grid.h)[mask]
    ut = (u_now[mask] - u_prev[mask]) / grid.tau
    x = grid.coords[mask]
    t = grid.times[level]
    psi = spec.psi_at(x, t, u_now[mask])
    return -ut * sc.s_k(H, spec.k) - psi, H, ut, psi


def residual(field: SolutionField, spec: ProblemSpec, grid: Grid, node, level: int) -> float:
    """Discrete equation residual at one interior node of ``level >= 1``."""
    node = tuple(node)
    if level < 1 or not grid.interior[(level,) + node]:
        raise DomainError(f"node {node} is not interior at level {level}")
    mask = np.zeros(grid.lattice_shape, dtype=bool)
    mask[node] = True
    res, *_ = _slice_residual(field.u[level], field.u[level - 1], grid, spec, level, mask)
    return float(res[0])


def residual_slice(field: SolutionField, spec: ProblemSpec, level: int) -> np.ndarray:
    """Residual on the whole lattice at ``level`` (NaN off the interior)."""
    grid = field.grid
    mask = grid.interior[level]
    out = np.full(grid.lattice_shape, np.nan)
    out[mask] = _slice_residual(field.u[level], field.u[level - 1], grid, spec, level, mask)[0]
    return out


def linearize(field: SolutionField, spec: ProblemSpec, grid: Grid, level: int,
              check: bool = True) -> sp.csr_matrix:
    """Exact Jacobian of the interior residual vector w.r.t. interior ``u^level``.

    Rows and columns follow the C-order of ``grid.interior[level]``.
    """
    return _jacobian(field.u[level], field.u[level - 1], grid, spec, level, check)


def _jacobian(u_now, u_prev, grid, spec, level, check=True):
    mask = grid.interior[level]
    n, h, k = grid.n, grid.h, spec.k
    H = hessian(u_now, h)[mask]
    if check:
        margin = np.min(sc.s_k_all(H, k)[:, 1:], axis=1)
        if np.any(margin < -CONE_TOL):
            raise SafeguardError(f"iterate leaves the closure of Gamma_{k} (margin {margin.min():.3e})")
    ut = (u_now[mask] - u_prev[mask]) / grid.tau
    x = grid.coords[mask]
    t = grid.times[level]
    a = -ut
    Sk = sc.s_k(H, k)
    G = sc.s_k_grad(H, k)
    psi_z = spec.psi_z_at(x, t, u_now[mask])

    flat = np.flatnonzero(mask.ravel())
    P = flat.size
    index = -np.ones(mask.size, dtype=np.int64)
    index[flat] = np.arange(P)
    strides = np.array([int(np.prod(mask.shape[d + 1:])) for d in range(n)])

    rows = [np.arange(P)]
    cols = [np.arange(P)]
    diag = -Sk / grid.tau - psi_z - 2.0 * a * np.trace(G, axis1=1, axis2=2) / h ** 2
    vals = [diag]
    for off in stencil_offsets(n):
        nz = [d for d in range(n) if off[d] != 0]
        if len(nz) == 1:
            i = nz[0]
            coef = a * G[:, i, i] / h ** 2
        else:
            i, j = nz
            coef = a * 2.0 * G[:, i, j] / (4 * h ** 2) * off[i] * off[j]
        nb = index[flat + int(np.dot(off, strides))]
        keep = nb >= 0
        rows.append(np.arange(P)[keep])
        cols.append(nb[keep])
        vals.append(coef[keep])
    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(P, P))
    return J.tocsr()


# --------------------------------------------------------------------------
# admissibility and Newton


def _admissible(u_now, u_prev, grid, spec, level):
    mask = grid.interior[level]
    H = hessian(u_now, grid.h)[mask]
    margin = np.min(sc.s_k_all(H, spec.k)[:, 1:], axis=1)
    drop = (u_prev[mask] - u_now[mask]) / grid.tau
    cone_ok = bool(np.all(margin >= -CONE_TOL))
    mono_ok = bool(np.all(drop >= spec.m1_floor / 2))
    return cone_ok, mono_ok, float(margin.min()), float(drop.min())


def _poisson_bump(grid, level):
    """phi with Delta_h phi = -1 on the interior of ``level`` and phi = 0 elsewhere."""
    mask = grid.interior[level]
    n, h = grid.n, grid.h
    flat = np.flatnonzero(mask.ravel())
    P = flat.size
    index = -np.ones(mask.size, dtype=np.int64)
    index[flat] = np.arange(P)
    strides = [int(np.prod(mask.shape[d + 1:])) for d in range(n)]
    rows, cols, vals = [np.arange(P)], [np.arange(P)], [np.full(P, -2.0 * n / h ** 2)]
    for d in range(n):
        for sgn in (1, -1):
            nb = index[flat + sgn * strides[d]]
            keep = nb >= 0
            rows.append(np.arange(P)[keep])
            cols.append(nb[keep])
            vals.append(np.full(keep.sum(), 1.0 / h ** 2))
    L = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(P, P))
    phi = np.zeros(mask.shape)
    phi[mask] = spla.spsolve(L, -np.ones(P))
    return phi


def _lower_envelope(grid, level, values):
    """Lower convex envelope of ``values`` over the closure of ``level``, at interior nodes.

    Returns None when the point set is degenerate for the hull computation.
    """
    closure = grid.closure[level]
    pts = np.column_stack([grid.coords[closure], values[closure]])
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    eq = hull.equations  # a . x + b z + c = 0 with outward normals
    lower = eq[eq[:, -2] < -1e-12]
    x = grid.coords[grid.interior[level]]
    planes = -(x @ lower[:, :-2].T + lower[:, -1]) / lower[:, -2]
    out = np.full(values.shape, np.nan)
    out[grid.interior[level]] = planes.max(axis=1)
    return out


def _initial_guess(prev_slice, g_now, spec, grid, level):
    """Starting iterate for Newton on one level.

    The default is the monotone continuation ``prev - m1 tau``. If that is
    not strictly inside the cone (or not monotone), fall back to dropping the
    interior as fast as the surrounding boundary data, then to subtracting
    multiples of a discrete Poisson bump, which adds a positive definite
    Hessian; the admissible candidate with the smallest residual wins.
    """
    mask = grid.interior[level]
    tau = grid.tau

    def strict(u):
        H = hessian(u, grid.h)[mask]
        margin = np.min(sc.s_k_all(H, spec.k)[:, 1:], axis=1)
        drop = (prev_slice[mask] - u[mask]) / tau
        return bool(np.all(margin > 0) and np.all(drop >= spec.m1_floor / 2))

    first = np.where(mask, prev_slice - spec.m1_floor * tau, g_now)
    if strict(first):
        return first
    ring = grid.boundary[level]
    rate = max(spec.m1_floor, float(np.max((prev_slice - g_now)[ring])) / tau)
    paced = np.where(mask, prev_slice - rate * tau, g_now)
    if strict(paced):
        return paced

    def best_of(candidates):
        best, best_res = None, np.inf
        for u in candidates:
            if u is None or not strict(u):
                continue
            res = np.max(np.abs(_slice_residual(u, prev_slice, grid, spec, level, mask)[0]))
            if res < best_res:
                best, best_res = u, res
        return best

    scale = max(1.0, float(np.max(np.abs(prev_slice[mask]))))
    phi = _poisson_bump(grid, level)
    best = best_of(paced - beta * phi for beta in scale * 2.0 ** np.arange(-12, 7))
    if best is not None:
        return best
    r2 = np.sum(grid.coords ** 2, axis=-1)
    for eps in scale * 2.0 ** np.arange(-8, 3, 2):
        env = _lower_envelope(grid, level, first - eps * r2)
        if env is not None:
            u = np.where(mask, env + eps * r2, g_now)
            if strict(u):
                return u
    return first


def solve_slice(prev_slice: np.ndarray, spec: ProblemSpec, grid: Grid, level: int,
                init_guess: np.ndarray | None = None):
    """Damped Newton solve for ``u^level`` given ``u^{level-1}``.

    Non-interior nodes are set to ``g(x, t_level)``. A trial step is accepted
    only if it reduces the max residual, keeps every interior Hessian in the
    closure of Gamma_k and keeps ``(prev - u) / tau >= m1 / 2``; otherwise the
    step is halved, up to ``MAX_HALVINGS`` times.

    Returns ``(slice, NewtonInfo)``.
    """
    mask = grid.interior[level]
    t = grid.times[level]
    g_now = spec.g_at(grid.coords, t)
    if not mask.any():
        return g_now, NewtonInfo(0, [], [])
    if init_guess is None:
        u = _initial_guess(prev_slice, g_now, spec, grid, level)
    else:
        u = np.where(mask, init_guess, g_now)

    res, _, _, psi = _slice_residual(u, prev_slice, grid, spec, level, mask)
    if np.any(psi < 0):
        raise DomainError(f"psi < 0 at level {level}")
    tol = RESIDUAL_TOL * (1.0 + float(np.max(np.abs(psi))))
    history = [float(np.max(np.abs(res)))]
    halvings = []
    cone_ok, mono_ok, *_ = _admissible(u, prev_slice, grid, spec, level)
    admissible = cone_ok and mono_ok

    for it in range(MAX_NEWTON + 1):
        rmax = history[-1]
        if rmax <= tol and admissible:
            return u, NewtonInfo(it, history, halvings)
        if it == MAX_NEWTON:
            break
        # an inadmissible starting guess is linearized as-is
        J = _jacobian(u, prev_slice, grid, spec, level, check=admissible)
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                delta = spla.spsolve(J.tocsc(), -res)
            except (spla.MatrixRankWarning, RuntimeError) as exc:
                raise ConeCollapseError(f"singular Jacobian at level {level}",
                                        {"level": level, "iteration": it, "residual": rmax}) from exc
        if not np.all(np.isfinite(delta)):
            raise ConeCollapseError(f"non-finite Newton step at level {level}",
                                    {"level": level, "iteration": it, "residual": rmax})
        if not admissible:
            # before the first admissible iterate only the residual is monitored;
            # an admissible trial along the way is taken at once
            step = 1.0
            for halving in range(MAX_HALVINGS + 1):
                trial = u.copy()
                trial[mask] += step * delta
                r_trial, *_ = _slice_residual(trial, prev_slice, grid, spec, level, mask)
                r_max = float(np.max(np.abs(r_trial)))
                cone_ok, mono_ok, margin, drop = _admissible(trial, prev_slice, grid, spec, level)
                if np.isfinite(r_max) and (r_max < rmax or (cone_ok and mono_ok)):
                    break
                step *= 0.5
            else:
                raise NonconvergenceError(
                    f"no residual decrease from an inadmissible iterate at level {level}",
                    {"level": level, "iteration": it, "residual": rmax})
            u, res = trial, r_trial
            history.append(r_max)
            halvings.append(halving)
            admissible = cone_ok and mono_ok
            if not admissible and r_max <= tol:
                raise ConeCollapseError(
                    f"Newton limit at level {level} is not k-convex-monotone",
                    {"level": level, "iteration": it, "margin": margin, "min_drop": drop})
            continue
        step = 1.0
        reason = None
        for halving in range(MAX_HALVINGS + 1):
            trial = u.copy()
            trial[mask] += step * delta
            cone_ok, mono_ok, margin, drop = _admissible(trial, prev_slice, grid, spec, level)
            if cone_ok and mono_ok:
                r_trial, *_ = _slice_residual(trial, prev_slice, grid, spec, level, mask)
                r_max = float(np.max(np.abs(r_trial)))
                if r_max < rmax:
                    u, res = trial, r_trial
                    history.append(r_max)
                    halvings.append(halving)
                    break
                reason = "residual"
            else:
                reason = "cone" if not cone_ok else "monotonicity"
            step *= 0.5
        else:
            diag = {"level": level, "iteration": it, "residual": rmax, "reason": reason,
                    "margin": margin, "min_drop": drop}
            if reason == "residual":
                if rmax <= 100 * tol:
                    # stalled at round-off level just above tolerance
                    return u, NewtonInfo(it, history, halvings)
                raise NonconvergenceError(f"line search stalled at level {level}", diag)
            raise ConeCollapseError(
                f"safeguard exhausted at level {level} ({reason})", diag)
    raise NonconvergenceError(
        f"Newton did not converge in {MAX_NEWTON} iterations at level {level}",
        {"level": level, "residuals": history})


def initial_slice_from(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    return spec.g_at(grid.coords, grid.times[0])


def solve(spec: ProblemSpec, domain: SpaceTimeDomain, grid: Grid,
          initial_slice: np.ndarray | None = None) -> SolutionField:
    """March all levels from the bottom slice to t = 0."""
    if not 1 <= spec.k <= domain.n:
        raise DomainError(f"k = {spec.k} outside 1..{domain.n}")
    u = np.empty((grid.levels,) + grid.lattice_shape)
    u[0] = initial_slice_from(spec, grid) if initial_slice is None else initial_slice
    infos = []
    for m in range(1, grid.levels):
        u[m], info = solve_slice(u[m - 1], spec, grid, m)
        infos.append(info)
        log.debug("level %d: %d Newton iterations, residual %.3e",
                  m, info.iterations, info.residuals[-1] if info.residuals else 0.0)
    return SolutionField(grid=grid, u=u, k=spec.k, newton=infos)


# --------------------------------------------------------------------------
# manufactured problems


def _sym_det(M):
    """Leibniz determinant of a small matrix of expression trees."""
    n = len(M)
    if n == 1:
        return M[0][0]
    total = ex.ZERO
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        term = ex.mul(M[0][j], _sym_det(minor))
        total = ex.add(total, term) if j % 2 == 0 else ex.sub(total, term)
    return total


def symbolic_sk(D2, k):
    n = len(D2)
    total = ex.ZERO
    for idx in itertools.combinations(range(n), k):
        total = ex.add(total, _sym_det([[D2[i][j] for j in idx] for i in idx]))
    return total


def manufactured_problem(u_exact, domain: SpaceTimeDomain, k: int, m1_floor: float | None = None,
                         grid: Grid | None = None) -> ProblemSpec:
    """Problem whose exact solution is ``u_exact``: psi := -u_t S_k(D^2 u_exact).

    Derivatives are taken on the expression tree. Admissibility (closure of
    Gamma_k, and -u_t >= m1_floor) is checked at the grid's interior nodes; a
    default grid is used when none is given.
    """
    if isinstance(u_exact, str):
        u_exact = ex.parse_expression(u_exact, ex.default_variables(domain.n))
    n = domain.n
    names = [f"x{i + 1}" for i in range(n)]
    D1 = [u_exact.diff(v) for v in names]
    D2 = [[D1[i].diff(names[j]) for j in range(n)] for i in range(n)]
    ut = u_exact.diff("t")
    psi = ex.mul(ex.neg(ut), symbolic_sk(D2, k))

    if grid is None:
        span = domain.shape.max_radius
        steps = 8
        grid = build_grid(domain, span / steps, -domain.shape.t_bottom / steps)
    mask = grid.interior
    pts = np.broadcast_to(grid.coords, mask.shape + (n,))[mask]
    ts = np.broadcast_to(grid.times.reshape((-1,) + (1,) * n), mask.shape)[mask]
    H = np.empty((pts.shape[0], n, n))
    for i in range(n):
        for j in range(n):
            H[:, i, j] = ex.evaluate_on(D2[i][j], pts, ts)
    margin = np.min(sc.s_k_all(H, k)[:, 1:], axis=1)
    rate = -ex.evaluate_on(ut, pts, ts)
    floor = 0.0 if m1_floor is None else m1_floor
    bad = np.flatnonzero((margin < -CONE_TOL) | (rate < floor) | (rate <= 0))
    if bad.size:
        b = bad[0]
        point = (tuple(pts[b]), float(ts[b]))
        raise ManufacturedProblemError(
            f"exact solution is not k-convex-monotone at x={point[0]}, t={point[1]} "
            f"(cone margin {margin[b]:.3e}, -u_t {rate[b]:.3e})", point)
    if m1_floor is None:
        m1_floor = float(rate.min())
    return ProblemSpec(k=k, psi=psi, g=u_exact, m1_floor=m1_floor)


def exact_values(expr: ex.Expr, grid: Grid) -> np.ndarray:
    """Evaluate ``expr(x, t)`` on every node of every level."""
    t = grid.times.reshape((-1,) + (1,) * grid.n)
    return ex.evaluate_on(expr, grid.coords[None], t)


@dataclass(frozen=True)
class Admissibility:
    min_cone_margin: float
    max_ut: float
    max_residual: float
    m1_floor: float

    @property
    def ok(self) -> bool:
        return self.min_cone_margin >= -CONE_TOL and self.max_ut <= -self.m1_floor / 2


def admissibility(field: SolutionField, spec: ProblemSpec) -> Admissibility:
    """Worst cone margin, largest backward-difference u_t and residual over all interior nodes."""
    margin, ut, res = np.inf, -np.inf, 0.0
    for m in range(1, field.grid.levels):
        mask = field.grid.interior[m]
        if not mask.any():
            continue
        margin = min(margin, float(np.nanmin(field.cone_margin(m, spec.k))))
        ut = max(ut, float(field.ut(m)[mask].max()))
        res = max(res, float(np.nanmax(np.abs(residual_slice(field, spec, m)))))
    return Admissibility(margin, ut, res, spec.m1_floor)


def field_from_expression(expr, grid: Grid, k: int | None = None) -> SolutionField:
    """SolutionField holding the exact values of ``expr(x, t)`` on every node."""
    if isinstance(expr, str):
        expr = ex.parse_expression(expr, ex.default_variables(grid.n))
    return SolutionField(grid, exact_values(expr, grid), k)

"""Auxiliary functionals and quantitative checks evaluated on discrete solutions.

Covers the interior gradient bound on paraboloids, the weighted second
derivative bound, parabolic Holder seminorms under rescaling, sublevel-set
geometry of the rescaled solution, and the structural hypotheses of the
Evans-Krylov regularity lemma for E(q, N) = (-q)^(1/k) S_k(N)^(1/k) - 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from . import expression as ex
from . import sigma as sc
from .errors import (AlignmentError, BoxTooSmallError, ConsistencyError, DomainError,
                     InputError)
from .grid import Cylinder, Grid, Paraboloid, SpaceTimeDomain, build_grid
from .holder import pairwise_seminorm
from .solver import ProblemSpec, SolutionField, solve

N_RANDOM_DIRECTIONS = 64


def direction_set(n: int, seed: int, count: int = N_RANDOM_DIRECTIONS) -> np.ndarray:
    """The n coordinate axes followed by ``count`` seeded random unit vectors."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.vstack([np.eye(n), v])


def _closure_sup(field, values):
    return float(np.max(np.abs(values[field.grid.closure])))


def _all_gradients(field):
    return np.stack([field.gradient(m) for m in range(field.grid.levels)])


def _all_hessians(field):
    return np.stack([field.hessian(m) for m in range(field.grid.levels)])


# --------------------------------------------------------------------------
# gradient estimate


@dataclass
class AuxG:
    values: np.ndarray = dc_field(repr=False)  # (levels, *lattice, directions)
    M: float
    aux_max: float
    aux_argmax: tuple  # (level, node, direction index)
    argmax_interior: bool
    rho_du_max: float
    case_split_ok: bool


def aux_G(field: SolutionField, r: float, directions, M: float | None = None) -> AuxG:
    """G = rho * phi(u) * u_xi with rho = 1 - (|x|^2 - t)/r^2, phi(s) = (M - s)^(-1/2).

    M defaults to 4 sup|u| over the closure. rho is clipped at zero so that
    G vanishes on the discrete parabolic boundary. Also evaluates the case
    split behind the gradient bound: whenever max rho * u_xi > 10 M / r the
    maximum of G must be attained at an interior node.
    """
    grid = field.grid
    if not isinstance(grid.domain.shape, Paraboloid):
        raise DomainError("aux_G needs a paraboloid domain")
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    sup_u = _closure_sup(field, field.u)
    if M is None:
        M = 4.0 * sup_u
    elif sup_u > M / 4 * (1 + 1e-12):
        raise ConsistencyError(f"sup|u| = {sup_u} exceeds M/4 = {M / 4}")
    closure = grid.closure
    t = grid.times.reshape((-1,) + (1,) * grid.n)
    rho = np.clip(1.0 - (np.sum(grid.coords[None] ** 2, axis=-1) - t) / r ** 2, 0.0, None)
    rho = np.where(grid.interior, rho, 0.0)
    G = np.zeros(field.u.shape + (len(dirs),))
    if M == 0:
        # u == 0 identically: Du = 0 and G = 0
        return AuxG(G, 0.0, 0.0, (grid.levels - 1, (0,) * grid.n, 0), False, 0.0, True)
    gap = M - field.u[closure]
    if np.any(gap < 0.75 * M * (1 - 1e-12)) or np.any(gap > 1.25 * M * (1 + 1e-12)):
        raise ConsistencyError("M - u left [3M/4, 5M/4]")
    phi = np.zeros(field.u.shape)
    phi[closure] = gap ** -0.5
    D1 = _all_gradients(field)
    inner = grid.interior
    du = np.zeros(field.u.shape + (len(dirs),))
    du[inner] = D1[inner] @ dirs.T
    G = (rho * phi)[..., None] * du
    rho_du = rho[..., None] * du
    flat = int(np.argmax(G))
    idx = np.unravel_index(flat, G.shape)
    level, node, d = idx[0], tuple(int(i) for i in idx[1:-1]), int(idx[-1])
    argmax_interior = bool(grid.interior[(level,) + node])
    rho_du_max = float(rho_du.max())
    condition = rho_du_max > 10 * M / r
    return AuxG(G, M, float(G.max()), (int(level), node, d), argmax_interior, rho_du_max,
                (not condition) or argmax_interior)


@dataclass
class GradientReport:
    grad_at_origin: float
    sup_u: float
    r: float
    ratio: float
    aux_max: float
    aux_argmax: tuple
    h: float = float("nan")
    tau: float = float("nan")
    case_split_ok: bool = True
    label: str = ""


def gradient_report(field: SolutionField, r: float, directions, label: str = "") -> GradientReport:
    grid = field.grid
    top = grid.levels - 1
    origin = grid.node_of((0.0,) * grid.n)
    du0 = field.gradient(top)[origin]
    grad0 = float(np.linalg.norm(du0))
    sup_u = _closure_sup(field, field.u)
    ratio = grad0 * r / sup_u if sup_u > 0 else 0.0
    G = aux_G(field, r, directions)
    return GradientReport(grad0, sup_u, r, ratio, G.aux_max, G.aux_argmax, grid.h, grid.tau,
                          G.case_split_ok, label)


@dataclass
class GradientCheck:
    reports: list
    max_ratio_by_grid: list
    bound: float
    max_ratio_change: float


def gradient_bound_check(family, r: float, refinements, n: int = 2, seed: int = 0,
                         labels=None) -> GradientCheck:
    """Solve every problem of ``family`` on Paraboloid(r) for each ``(h, tau)``.

    The source must be the same constant for the whole family. Reports the
    ratio |Du(0,0)| r / sup|u| for each instance and grid, the largest ratio
    per grid, their common bound and the relative change of that largest
    ratio between consecutive grids.
    """
    psis = set()
    for spec in family:
        if spec.psi.variables():
            raise InputError("the gradient check needs a constant source term")
        psis.add(float(spec.psi.evaluate({})))
    if len(psis) != 1:
        raise InputError("the family must share one constant source term")
    domain = SpaceTimeDomain(Paraboloid(r), n)
    dirs = direction_set(n, seed)
    labels = labels or [str(i) for i in range(len(family))]
    reports, per_grid = [], []
    for h, tau in refinements:
        grid = build_grid(domain, h, tau)
        worst = 0.0
        for spec, label in zip(family, labels):
            field = solve(spec, domain, grid)
            rep = gradient_report(field, r, dirs, label)
            reports.append(rep)
            worst = max(worst, rep.ratio)
        per_grid.append(worst)
    changes = [abs(b - a) / a if a > 0 else (0.0 if b == 0 else math.inf)
               for a, b in zip(per_grid, per_grid[1:])]
    return GradientCheck(reports, per_grid, max(per_grid), max(changes, default=0.0))


# --------------------------------------------------------------------------
# Pogorelov estimate


@dataclass
class PogorelovReport:
    sup_phi: float
    sup_pog: float
    M_cap: float
    argmax: tuple = ()


def aux_Phi_and_pogorelov(field: SolutionField, w, directions) -> PogorelovReport:
    """Phi = (w - u)^4 phi(|Du|^2 / 2) u_xixi with phi(s) = (1 - s/M)^(-1/8), M = 2 sup|Du|^2.

    Returns the sup of Phi over interior nodes and directions, and the sup of
    (w - u)^4 |D^2u| with the spectral norm. ``w`` is a scalar or an array
    shaped like ``field.u``; it must dominate u in the interior and agree
    with u on the discrete parabolic boundary, both up to h^2.
    """
    grid = field.grid
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    W = np.broadcast_to(np.asarray(w, dtype=float), field.u.shape)
    tol = grid.h ** 2
    inner = grid.interior
    gap = W - field.u
    if np.any(gap[inner] < -tol):
        raise InputError(f"w < u at an interior node (min w - u = {gap[inner].min():.3e})")
    if np.any(np.abs(gap[grid.boundary]) > tol):
        raise InputError("w differs from u on the parabolic boundary")
    D1 = _all_gradients(field)[inner]
    D2 = _all_hessians(field)[inner]
    s = 0.5 * np.sum(D1 ** 2, axis=-1)
    M = 2.0 * float(np.max(2 * s)) if s.size else 0.0
    if M > 0:
        if np.any(s > M / 4 * (1 + 1e-12)):
            raise ConsistencyError("|Du|^2/2 exceeds M/4")
        phi = (1.0 - s / M) ** -0.125
        if np.any(phi < 1 - 1e-12) or np.any(phi > 0.75 ** -0.125 * (1 + 1e-12)):
            raise ConsistencyError("phi left [1, (3/4)^(-1/8)]")
    else:
        phi = np.ones_like(s)
    weight = np.clip(gap[inner], 0.0, None) ** 4
    uxx = np.einsum("di,pij,dj->pd", dirs, D2, dirs)
    Phi = (weight * phi)[:, None] * uxx
    norm = np.max(np.abs(np.linalg.eigvalsh(D2)), axis=-1) if D2.size else np.zeros(0)
    pog = weight * norm
    if not pog.size:
        return PogorelovReport(0.0, 0.0, M)
    where = np.argwhere(inner)[int(np.argmax(pog))]
    return PogorelovReport(float(max(Phi.max(), 0.0)), float(pog.max()), M,
                           (int(where[0]), tuple(int(i) for i in where[1:])))


# --------------------------------------------------------------------------
# rescaling


def _sub_grid(grid: Grid, p: int, q: int) -> tuple:
    """Lattice and level selections of a coarsening by p in space and q in time."""
    N = grid.half_width
    keep = np.arange(-(N // p), N // p + 1) * p + N
    top = grid.levels - 1
    levels = np.arange(top, -1, -q)[::-1]
    return keep, levels


def coarsen(field: SolutionField, p: int = 1, q: int | None = None) -> SolutionField:
    """Restriction of ``field`` to every p-th lattice node and every q-th level (counted from t = 0)."""
    q = p * p if q is None else q
    grid = field.grid
    if p < 1 or q < 1:
        raise AlignmentError("coarsening ratios must be positive integers")
    if p == 1 and q == 1:
        return field
    keep, levels = _sub_grid(grid, p, q)
    if len(levels) < 2 or len(keep) < 3:
        raise AlignmentError("coarsening leaves too few nodes")
    sel = np.ix_(levels, *([keep] * grid.n))
    u = field.u[sel]
    coords = grid.coords[np.ix_(*([keep] * grid.n))]
    interior = grid.interior[sel].copy()
    edge = np.ones(interior.shape[1:], dtype=bool)
    edge[(slice(1, -1),) * grid.n] = False
    interior[:, edge] = False
    interior[0] = False
    cube = np.ones((3,) * grid.n, dtype=bool)
    boundary = np.zeros_like(interior)
    boundary[0] = grid.closure[sel][0]
    for m in range(1, len(levels)):
        boundary[m] = ndimage.binary_dilation(interior[m], structure=cube) & ~interior[m]
    new = Grid(domain=grid.domain, h=grid.h * p, tau=grid.tau * q, half_width=len(keep) // 2,
               times=grid.times[levels].copy(), interior=interior, boundary=boundary,
               axis=grid.axis[keep].copy(), coords=coords)
    return SolutionField(new, u.copy(), field.k)


def _scaled_domain(domain: SpaceTimeDomain, R: float, t_bottom: float) -> SpaceTimeDomain:
    shape = domain.shape
    if isinstance(shape, Cylinder):
        new = Cylinder(shape.radius / R, t_bottom / R ** 2)
    else:
        new = Paraboloid(shape.r / R)
    return SpaceTimeDomain(new, domain.n)


def relabel(field: SolutionField, R: float) -> SolutionField:
    """v(x, t) = (u(Rx, R^2 t) - R^2) / R^2 on the same nodes with coordinates divided by R, R^2."""
    grid = field.grid
    R2 = R * R
    new = Grid(domain=_scaled_domain(grid.domain, R, grid.times[0]), h=grid.h / R,
               tau=grid.tau / R2, half_width=grid.half_width, times=grid.times / R2,
               interior=grid.interior.copy(), boundary=grid.boundary.copy(),
               axis=grid.axis / R, coords=grid.coords / R)
    return SolutionField(new, (field.u - R2) / R2, field.k)


def alignment(grid: Grid, R: float, h_target: float | None, tau_target: float | None) -> tuple:
    """Integer coarsening ratios (p, q) with R h_target = p h and R^2 tau_target = q tau."""
    if not R > 0:
        raise DomainError("R must be positive")
    p = 1.0 if h_target is None else R * h_target / grid.h
    q = 1.0 if tau_target is None else R * R * tau_target / grid.tau
    out = []
    for name, val in (("space", p), ("time", q)):
        iv = int(round(val))
        if iv < 1 or abs(val - iv) > 1e-9 * max(1.0, val):
            raise AlignmentError(f"R = {R} does not align the {name} grid (ratio {val})")
        out.append(iv)
    return tuple(out)


def rescale(field: SolutionField, R: float, h_target: float | None = None,
            tau_target: float | None = None) -> SolutionField:
    """v(x, t) = (u(Rx, R^2 t) - R^2) / R^2 by exact node correspondence.

    Default targets are h / R and tau / R^2 (every source node is kept).
    Coarser targets must make R h_target and R^2 tau_target integer
    multiples of the source spacings.
    """
    p, q = alignment(field.grid, R, h_target, tau_target)
    return relabel(coarsen(field, p, q), R)


def rescale_problem(spec: ProblemSpec, R: float) -> ProblemSpec:
    """Problem solved by the rescaled field: psi_v(x, t, z) = psi(Rx, R^2 t, R^2 z + R^2)."""
    R2 = ex.Num(float(R * R))
    Rn = ex.Num(float(R))
    names = set()
    for e in (spec.psi, spec.g):
        names |= e.variables()
    mapping = {v: ex.BinOp("*", Rn, ex.Var(v)) for v in names if v.startswith("x")}
    mapping["t"] = ex.BinOp("*", R2, ex.Var("t"))
    psi_map = dict(mapping)
    psi_map["z"] = ex.BinOp("+", ex.BinOp("*", R2, ex.Var("z")), R2)
    psi = ex.substitute(spec.psi, psi_map)
    g = ex.BinOp("/", ex.BinOp("-", ex.substitute(spec.g, mapping), R2), R2)
    return ProblemSpec(spec.k, psi, g, spec.m1_floor)


# --------------------------------------------------------------------------
# sublevel sets


@dataclass
class LevelDomain:
    mask: np.ndarray = dc_field(repr=False)
    threshold: float
    inner_radius: float
    outer_radius: float
    t_floor: float
    nested: bool


def level_domain(field: SolutionField, threshold: float = 0.0) -> LevelDomain:
    """Discrete sublevel set {v < threshold} over the closure of the grid.

    At t = 0 the inner radius is the distance to the nearest lattice node
    outside the set (every node closer lies inside) and the outer radius is
    the largest |x| inside. Raises :class:`BoxTooSmallError` if the set
    reaches the parabolic boundary of the computational domain, since the
    sublevel set would then be cut off.
    """
    grid = field.grid
    mask = (field.u < threshold) & grid.interior
    if np.any((field.u < threshold) & grid.boundary):
        raise BoxTooSmallError("sublevel set reaches the boundary of the computational box")
    top = grid.levels - 1
    r = np.sqrt(np.sum(grid.coords ** 2, axis=-1))
    inside = mask[top]
    outside = ~inside
    inner = float(r[outside].min()) if outside.any() else math.inf
    outer = float(r[inside].max()) if inside.any() else 0.0
    rows = np.flatnonzero(mask.reshape(grid.levels, -1).any(axis=1))
    t_floor = float(grid.times[rows[0]]) if rows.size else 0.0
    nested = bool(all(np.all(mask[m] <= mask[m + 1]) for m in range(grid.levels - 1)))
    return LevelDomain(mask, threshold, inner, outer, t_floor, nested)


def check_quadratic_bounds(field: SolutionField, A1: float, A2: float, tol: float = 1e-12) -> bool:
    """A1 |x|^2 - 1 <= v(x, 0) <= A2 |x|^2 - 1/2 on the closure of the top slice."""
    grid = field.grid
    top = grid.levels - 1
    mask = grid.closure[top]
    r2 = np.sum(grid.coords ** 2, axis=-1)[mask]
    v = field.u[top][mask]
    return bool(np.all(v >= A1 * r2 - 1 - tol) and np.all(v <= A2 * r2 - 0.5 + tol))


# --------------------------------------------------------------------------
# Evans-Krylov hypotheses


def ek_value(q, N, k):
    """E(q, N) = (-q)^(1/k) S_k(N)^(1/k) - 1 (stackable)."""
    return (-np.asarray(q)) ** (1.0 / k) * np.asarray(sc.s_k(N, k)) ** (1.0 / k) - 1.0


def ek_dq(q, N, k):
    return -(1.0 / k) * (-np.asarray(q)) ** (1.0 / k - 1) * np.asarray(sc.s_k(N, k)) ** (1.0 / k)


@dataclass
class EKReport:
    samples: int
    lambda1_q: float
    lambda2_q: float
    lambda1_n: float
    lambda2_n: float
    ek1_violations: list
    ek2_violations: list
    concavity_violations: list
    seed: int

    @property
    def violations(self) -> int:
        return len(self.ek1_violations) + len(self.ek2_violations) + len(self.concavity_violations)


def _sample_admissible(rng, n, k, m1, m2, C0, count):
    """Symmetric N with spectrum in Gamma_k, 1/m2 <= S_k(N) <= 1/m1 and ||N|| <= C0."""
    out = []
    while len(out) < count:
        lam = sc.sample_gamma_k(rng, n, k, 4 * (count - len(out)) + 16)
        target = rng.uniform(1.0 / m2, 1.0 / m1, len(lam))
        lam = lam * (target / sc.elementary_all(lam, k)[:, k])[:, None] ** (1.0 / k)
        lam = lam[np.max(np.abs(lam), axis=1) <= C0]
        for l in lam[: count - len(out)]:
            Q = sc.random_orthogonal(rng, n)
            N = Q @ np.diag(l) @ Q.T
            out.append((N + N.T) / 2)
    return np.array(out)


def _in_set(N, k, m1, m2, C0):
    S = np.asarray(sc.s_k(N, k))
    margin = np.min(sc.s_k_all(N, k)[..., 1:], axis=-1)
    norm = np.max(np.abs(np.linalg.eigvalsh(N)), axis=-1)
    return (margin > 0) & (S >= 1 / m2) & (S <= 1 / m1) & (norm <= C0)


def ek_hypothesis_check(n: int, k: int, m1: float, m2: float, C0: float, samples: int,
                        seed: int = 0) -> EKReport:
    """Seeded sweep of the structural conditions on [-m2, -m1] x the admissible matrix set.

    The matrix set is taken inside Gamma_k (where E is defined and smooth).
    EK-1 is violated when E_q is not strictly negative; EK-2 when the
    increment along a nonnegative-definite N2 (kept inside the set) is not
    positive; concavity when E at a convex combination falls below the chord
    by more than 1e-10. The reported Lambda values are the empirical extremes.
    """
    if not (0 < m1 <= m2 and C0 > 0):
        raise DomainError("need 0 < m1 <= m2 and C0 > 0")
    if not 1 <= k <= n:
        raise DomainError("need 1 <= k <= n")
    rng = np.random.default_rng(seed)
    N1 = _sample_admissible(rng, n, k, m1, m2, C0, samples)
    q = rng.uniform(-m2, -m1, samples)

    Eq = ek_dq(q, N1, k)
    ek1 = [int(i) for i in np.flatnonzero(~(np.isfinite(Eq) & (Eq < 0)))]

    # nonnegative-definite increments of small norm
    B = rng.normal(size=(samples, n, n))
    N2 = B @ np.swapaxes(B, 1, 2)
    size = rng.uniform(1e-3, 0.1, samples)
    N2 *= (size / np.max(np.linalg.eigvalsh(N2), axis=1))[:, None, None]
    for _ in range(60):
        bad = ~_in_set(N1 + N2, k, m1, m2, C0)
        if not bad.any():
            break
        N2[bad] *= 0.5
    ok = _in_set(N1 + N2, k, m1, m2, C0)
    norm2 = np.max(np.abs(np.linalg.eigvalsh(N2)), axis=1)
    inc = (ek_value(q, N1 + N2, k) - ek_value(q, N1, k)) / norm2
    ek2 = [int(i) for i in np.flatnonzero(ok & ~(np.isfinite(inc) & (inc > 0)))]

    Nb = _sample_admissible(rng, n, k, m1, m2, C0, samples)
    th = rng.uniform(0.0, 1.0, samples)
    mid = th[:, None, None] * N1 + (1 - th)[:, None, None] * Nb
    lhs = ek_value(q, mid, k)
    rhs = th * ek_value(q, N1, k) + (1 - th) * ek_value(q, Nb, k)
    conc = [int(i) for i in np.flatnonzero(~(lhs >= rhs - 1e-10))]

    return EKReport(samples, float(np.min(-Eq)), float(np.max(-Eq)),
                    float(np.min(inc[ok])) if ok.any() else math.nan,
                    float(np.max(inc[ok])) if ok.any() else math.nan,
                    ek1, ek2, conc, seed)


# --------------------------------------------------------------------------
# Liouville rescaling pipeline


@dataclass
class RescaleEntry:
    R: float
    valid: bool
    q_in_sublevel: bool
    semi_d2u: float
    semi_d2v: float
    identity_error: float
    semi_ut: float
    semi_vt: float
    ut_identity_error: float
    nodes: int
    omega: LevelDomain | None = dc_field(default=None, repr=False)
    note: str = ""


@dataclass
class RescalingReport:
    R_list: list
    alpha: float
    entries: list
    semi_decay: list
    omega_R_slice0_radii: list
    t_floor: list
    non_increasing: bool
    valid: bool


def _box_mask(grid, radius, t_min):
    r2 = np.sum(grid.coords ** 2, axis=-1)
    tmask = grid.times > t_min
    return (r2[None] < radius ** 2) & tmask.reshape((-1,) + (1,) * grid.n)


def _semi_pair(field, mask, alpha):
    """[D^2 f] and [f_t] over the interior nodes selected by ``mask``."""
    grid = field.grid
    inner = mask & grid.interior
    if inner.sum() < 2:
        return 0.0, 0.0, int(inner.sum())
    lev, *_ = np.nonzero(inner)
    x = np.broadcast_to(grid.coords, inner.shape + (grid.n,))[inner]
    t = grid.times[lev]
    iu = np.triu_indices(grid.n)
    H = np.concatenate([field.hessian(m)[inner[m]] for m in range(grid.levels)])
    # level 0 never has interior nodes, so u_t exists wherever inner is set
    UT = np.concatenate([field.ut(m)[inner[m]] for m in range(1, grid.levels)])
    return (pairwise_seminorm(x, t, H[:, iu[0], iu[1]], alpha),
            pairwise_seminorm(x, t, UT, alpha), int(inner.sum()))


def liouville_decay_experiment(field: SolutionField, R_list, alpha: float, A1: float, A2: float,
                               m1: float, m2: float, h_target: float | None = None,
                               tolerance: float = 0.05) -> RescalingReport:
    """Rescale a base solution for each R and compare Holder seminorms.

    For each R the rescaled v lives on a grid of spacing ``h_target``
    (default h / min(R)) so that every R samples the same number of nodes.
    Q = {|x| < 1/sqrt(8 A2), t > -1/(48 m2)} must lie in {v < -1/3};
    [D^2 v] and [v_t] are taken over Q' = {|x| < 1/sqrt(10 A2), t > -1/(50 m2)}
    and [D^2 u], [u_t] over the corresponding nodes of Q~ = R Q' on the
    aligned source sub-lattice, where the identity
    [D^2 u](Q~) = R^(-alpha) [D^2 v](Q') is checked.
    """
    R_list = [float(R) for R in R_list]
    grid = field.grid
    if h_target is None:
        h_target = grid.h / min(R_list)
    entries = []
    for R in R_list:
        p, _ = alignment(grid, R, h_target, None)
        base = coarsen(field, p, p * p)
        v = relabel(base, R)
        vg = v.grid
        Qp = _box_mask(vg, 1 / math.sqrt(10 * A2), -1 / (50 * m2))
        Q = _box_mask(vg, 1 / math.sqrt(8 * A2), -1 / (48 * m2))
        if np.any(Qp & ~vg.interior) or np.any(Q & ~vg.interior):
            raise BoxTooSmallError(
                f"R = {R}: the cylinder Q~ is not covered by interior nodes of the base solution")
        q_ok = bool(np.all(v.u[Q] < -1.0 / 3.0))
        sd2u, sut, count = _semi_pair(base, Qp, alpha)
        sd2v, svt, _ = _semi_pair(v, Qp, alpha)
        err = abs(sd2u - R ** -alpha * sd2v)
        err_t = abs(sut - R ** -alpha * svt)
        try:
            omega = level_domain(v)
            note = ""
        except BoxTooSmallError as exc:
            omega, note = None, str(exc)
        entries.append(RescaleEntry(R, q_ok, q_ok, sd2u, sd2v, err, sut, svt, err_t, count,
                                    omega, note))
    decay = [(e.R, e.semi_d2u) for e in entries]
    non_inc = all(b[1] <= a[1] * (1 + tolerance) + 1e-10 for a, b in zip(decay, decay[1:]))
    radii = [(e.omega.inner_radius, e.omega.outer_radius) if e.omega else None for e in entries]
    floors = [e.omega.t_floor if e.omega else None for e in entries]
    return RescalingReport(R_list, alpha, entries, decay, radii, floors, non_inc,
                           all(e.valid for e in entries))

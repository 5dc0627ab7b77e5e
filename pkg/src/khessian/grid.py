"""Space-time domains, their lattice discretization and finite-difference stencils."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import ndimage

from .errors import DegenerateGridError, DomainError


@dataclass(frozen=True)
class Cylinder:
    """B_radius x (t_start, 0]."""
    radius: float
    t_start: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("cylinder radius must be positive")
        if not self.t_start < 0:
            raise DomainError("cylinder t_start must be negative")

    @property
    def t_bottom(self) -> float:
        return self.t_start

    @property
    def max_radius(self) -> float:
        return self.radius

    def inside(self, x, t):
        return np.sum(np.asarray(x) ** 2, axis=-1) < self.radius ** 2

    def closure_at_bottom(self, x):
        return np.sum(np.asarray(x) ** 2, axis=-1) <= self.radius ** 2


@dataclass(frozen=True)
class Paraboloid:
    """{(x, t): |x|^2 - r^2 < t, t <= 0}; the bottom slice is the point (0, -r^2)."""
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError("paraboloid r must be positive")

    @property
    def t_bottom(self) -> float:
        return -self.r ** 2

    @property
    def max_radius(self) -> float:
        return self.r

    def inside(self, x, t):
        return np.sum(np.asarray(x) ** 2, axis=-1) - self.r ** 2 < t

    def closure_at_bottom(self, x):
        return np.sum(np.asarray(x) ** 2, axis=-1) <= 0.0

    def rho(self, x, t):
        """Cut-off 1 - (|x|^2 - t) / r^2; zero on the lateral boundary."""
        return 1.0 - (np.sum(np.asarray(x) ** 2, axis=-1) - t) / self.r ** 2


Shape = Union[Cylinder, Paraboloid]


@dataclass(frozen=True)
class SpaceTimeDomain:
    shape: Shape
    n: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got {self.n}")


@dataclass
class Grid:
    """Uniform lattice ``x = h * i`` (``i`` integer) over levels ``t_m``.

    Masks have shape ``(levels,) + lattice_shape``. Interior nodes are lattice
    nodes strictly inside the domain at a level ``m >= 1``; boundary nodes are
    the rest of the discrete parabolic boundary: the whole first slice closure
    plus, at every later level, the non-interior nodes adjacent (in the
    3^n stencil sense) to an interior node.
    """
    domain: SpaceTimeDomain
    h: float
    tau: float
    half_width: int
    times: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    axis: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def levels(self) -> int:
        return self.times.size

    @property
    def lattice_shape(self) -> tuple:
        return self.coords.shape[:-1]

    @property
    def exterior(self) -> np.ndarray:
        return ~(self.interior | self.boundary)

    @property
    def closure(self) -> np.ndarray:
        return self.interior | self.boundary

    def level_of(self, t: float) -> int:
        m = int(round((t - self.times[0]) / self.tau))
        if not 0 <= m < self.levels or abs(self.times[m] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"t = {t} is not a grid level")
        return m

    def node_of(self, x) -> tuple:
        idx = tuple(int(round(c / self.h)) + self.half_width for c in x)
        if any(not 0 <= i < 2 * self.half_width + 1 for i in idx):
            raise DomainError(f"x = {x} is outside the lattice")
        return idx

    def interior_count(self, level: int) -> int:
        return int(self.interior[level].sum())


def build_grid(domain: SpaceTimeDomain, h: float, tau: float, margin: int = 2) -> Grid:
    if not (h > 0 and tau > 0):
        raise DomainError("h and tau must be positive")
    shape = domain.shape
    steps = -shape.t_bottom / tau
    M = int(round(steps))
    if M < 1 or abs(steps - M) > 1e-9 * max(1.0, steps):
        raise DomainError(f"tau = {tau} does not divide the time span {-shape.t_bottom}")
    times = -(M - np.arange(M + 1)) * tau
    times[-1] = 0.0

    N = int(math.ceil(shape.max_radius / h - 1e-12)) + margin
    axis = h * np.arange(-N, N + 1)
    mesh = np.meshgrid(*([axis] * domain.n), indexing="ij")
    coords = np.stack(mesh, axis=-1)

    n_lev = M + 1
    lat = coords.shape[:-1]
    interior = np.zeros((n_lev,) + lat, dtype=bool)
    boundary = np.zeros_like(interior)
    cube = np.ones((3,) * domain.n, dtype=bool)
    edge = np.ones(lat, dtype=bool)
    edge[(slice(1, -1),) * domain.n] = False

    first = shape.closure_at_bottom(coords) | shape.inside(coords, times[0])
    boundary[0] = ndimage.binary_dilation(first, structure=cube)
    for m in range(1, n_lev):
        inner = shape.inside(coords, times[m]) & ~edge
        interior[m] = inner
        boundary[m] = ndimage.binary_dilation(inner, structure=cube) & ~inner
    if not interior.any():
        raise DegenerateGridError(f"no interior node for h={h}, tau={tau}")
    if (boundary | interior)[(slice(None),) + tuple([0] * domain.n)].any():
        raise DegenerateGridError("lattice margin too small")
    return Grid(domain=domain, h=h, tau=tau, half_width=N, times=times,
                interior=interior, boundary=boundary, axis=axis, coords=coords)


def _shift(U, offset):
    """View of U shifted by an integer offset, restricted to the inner lattice."""
    sl = tuple(slice(1 + o, U.shape[d] - 1 + o) for d, o in enumerate(offset))
    return U[sl]


def stencil_offsets(n: int):
    """Offsets used by the centered Hessian stencil (pure and cross terms)."""
    out = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        out.append(tuple(e))
        out.append(tuple(-v for v in e))
    for i, j in itertools.combinations(range(n), 2):
        for si, sj in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
            e = [0] * n
            e[i], e[j] = si, sj
            out.append(tuple(e))
    return out


def hessian(U: np.ndarray, h: float) -> np.ndarray:
    """Centered second differences of a lattice slice; NaN on the lattice edge.

    Pure terms use the 3-point stencil, mixed terms the 4-point cross stencil.
    Returns shape ``U.shape + (n, n)``.
    """
    n = U.ndim
    out = np.full(U.shape + (n, n), np.nan)
    inner = (slice(1, -1),) * n
    c = _shift(U, (0,) * n)
    for i in range(n):
        e = [0] * n
        e[i] = 1
        p = _shift(U, e)
        q = _shift(U, [-v for v in e])
        out[inner + (i, i)] = ((p - c) + (q - c)) / (h * h)
    for i, j in itertools.combinations(range(n), 2):
        def at(si, sj):
            e = [0] * n
            e[i], e[j] = si, sj
            return _shift(U, e)
        val = ((at(1, 1) + at(-1, -1)) - (at(1, -1) + at(-1, 1))) / (4 * h * h)
        out[inner + (i, j)] = val
        out[inner + (j, i)] = val
    return out


def gradient(U: np.ndarray, h: float) -> np.ndarray:
    """Centered first differences; NaN on the lattice edge. Shape ``U.shape + (n,)``."""
    n = U.ndim
    out = np.full(U.shape + (n,), np.nan)
    inner = (slice(1, -1),) * n
    for i in range(n):
        e = [0] * n
        e[i] = 1
        out[inner + (i,)] = (_shift(U, e) - _shift(U, [-v for v in e])) / (2 * h)
    return out

"""Parabolic Holder seminorms over node sets, by exhaustive pair search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_CHUNK = 512
_NEAR = 1e-12  # pairs within this relative gap of the max are re-evaluated


def pairwise_seminorm(x, t, values, alpha: float) -> float:
    """sup over distinct node pairs of |f(a) - f(b)| / (|x_a - x_b|^2 + |t_a - t_b|)^(alpha/2).

    ``x`` has shape (P, n), ``t`` shape (P,), ``values`` shape (P,) or (P, c);
    with several components the largest per-component seminorm is returned.
    Pairs at zero parabolic distance are skipped.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    f = np.asarray(values, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    P = x.shape[0]
    if P < 2:
        raise DomainError("need at least two nodes")
    # Vectorized pass; numpy's pow may differ from libm pow by an ulp, so the
    # near-maximal pairs are re-evaluated in scalar arithmetic at the end.
    best = 0.0
    cand = []
    for a0 in range(0, P, _CHUNK):
        a = slice(a0, min(a0 + _CHUNK, P))
        # only pairs (i, j) with j > i; the quotient is symmetric
        xb, tb, fb = x[a0:], t[a0:], f[a0:]
        d2 = np.zeros((a.stop - a0, xb.shape[0]))
        for c in range(x.shape[1]):
            d2 = d2 + (x[a, c][:, None] - xb[None, :, c]) ** 2
        den = (d2 + np.abs(t[a][:, None] - tb[None, :])) ** (alpha / 2)
        ok = den != 0
        if not ok.any():
            continue
        for c in range(f.shape[1]):
            num = np.abs(f[a, c][:, None] - fb[None, :, c])
            q = np.where(ok, num / np.where(ok, den, 1.0), -1.0)
            top = float(q.max())
            if top < best * (1 - _NEAR):
                continue
            best = max(best, top)
            ii, jj = np.nonzero(q >= best * (1 - _NEAR))
            cand = [e for e in cand if e[0] >= best * (1 - _NEAR)]
            cand.extend((float(q[i, j]), a0 + int(i), a0 + int(j), c) for i, j in zip(ii, jj))
    if best == 0.0:
        return 0.0
    return max(_scalar_quotient(x, t, f, i, j, c, alpha) for _, i, j, c in cand)


def _scalar_quotient(x, t, f, i, j, c, alpha):
    d2 = 0.0
    for d in range(x.shape[1]):
        d2 = d2 + (float(x[i, d]) - float(x[j, d])) ** 2
    den = (d2 + abs(float(t[i]) - float(t[j]))) ** (alpha / 2)
    return abs(float(f[i, c]) - float(f[j, c])) / den


@dataclass(frozen=True)
class HolderSeminorms:
    alpha: float
    semi_u: float
    semi_d2u: float
    semi_ut: float
    full_norm: float


def _subdomain_mask(field, subdomain):
    grid = field.grid
    if subdomain is None:
        return grid.closure.copy()
    if callable(subdomain):
        t = grid.times.reshape((-1,) + (1,) * grid.n)
        return np.asarray(subdomain(grid.coords[None], t), dtype=bool) & grid.closure
    mask = np.asarray(subdomain, dtype=bool)
    if mask.shape != grid.interior.shape:
        raise DomainError(f"subdomain mask has shape {mask.shape}, expected {grid.interior.shape}")
    return mask


def _nodes(field, mask):
    grid = field.grid
    lev, *_ = np.nonzero(mask)
    x = np.broadcast_to(grid.coords, mask.shape + (grid.n,))[mask]
    return x, grid.times[lev], lev


def holder_seminorm(field, alpha: float, subdomain=None) -> HolderSeminorms:
    """Seminorms of u, D^2u (max over entries) and u_t over a node subset.

    ``subdomain`` is a boolean mask over (level, lattice), a predicate
    ``f(x, t) -> bool`` or None for the whole closure. u is taken over every
    selected node; D^2u and u_t only over selected interior nodes (where the
    difference quotients belong to the scheme).
    """
    mask = _subdomain_mask(field, subdomain)
    if mask.sum() < 2:
        raise DomainError("subdomain contains fewer than two nodes")
    grid = field.grid
    x, t, _ = _nodes(field, mask)
    semi_u = pairwise_seminorm(x, t, field.u[mask], alpha)

    inner = mask & grid.interior
    D2 = np.stack([field.hessian(m) for m in range(grid.levels)])
    D1 = np.stack([field.gradient(m) for m in range(grid.levels)])
    UT = np.full(field.u.shape, np.nan)
    for m in range(1, grid.levels):
        UT[m] = field.ut(m)
    n = grid.n
    iu = np.triu_indices(n)
    semi_d2u = semi_ut = 0.0
    sup_d2 = sup_d1 = sup_ut = 0.0
    if inner.sum() >= 2:
        xi, ti, _ = _nodes(field, inner)
        H = D2[inner]
        semi_d2u = pairwise_seminorm(xi, ti, H[:, iu[0], iu[1]], alpha)
        semi_ut = pairwise_seminorm(xi, ti, UT[inner], alpha)
    if inner.any():
        H = D2[inner]
        sup_d2 = float(np.max(np.abs(np.linalg.eigvalsh(H))))
        sup_d1 = float(np.max(np.linalg.norm(D1[inner], axis=-1)))
        sup_ut = float(np.max(np.abs(UT[inner])))
    sup_u = float(np.max(np.abs(field.u[mask])))
    full = sup_u + sup_d1 + sup_d2 + sup_ut + semi_d2u + semi_ut
    return HolderSeminorms(alpha, semi_u, semi_d2u, semi_ut, full)

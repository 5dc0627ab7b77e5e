"""Elementary symmetric functions of spectra and the k-Hessian operator.

Spectra are 1-D float arrays; symmetric matrices are ``(n, n)`` arrays or
stacks ``(..., n, n)``. The matrix functions (:func:`s_k`, :func:`s_k_grad`)
never diagonalize: ``S_k`` is the sum of the ``k x k`` principal minors, which
stays well defined and smooth when eigenvalues repeat.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConeError, DomainError

#: Tolerance used by :func:`in_closure_gamma_k` (solver safeguards).
CLOSURE_TOL = 1e-12


def as_spectrum(values) -> np.ndarray:
    lam = np.asarray(values, dtype=float)
    if lam.ndim != 1 or lam.size < 1:
        raise DomainError(f"spectrum must be a non-empty vector, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)):
        raise DomainError("spectrum has non-finite entries")
    return lam


def sorted_desc(values) -> np.ndarray:
    return np.sort(as_spectrum(values))[::-1]


def as_sym_matrix(entries) -> np.ndarray:
    """Validate a symmetric matrix (or a stack of them); symmetry must be exact."""
    H = np.asarray(entries, dtype=float)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise DomainError(f"expected square matrices, got shape {H.shape}")
    if not np.array_equal(H, np.swapaxes(H, -1, -2)):
        raise DomainError("matrix is not symmetric")
    return H


def symmetrize(entries) -> np.ndarray:
    H = np.asarray(entries, dtype=float)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def _check_order(l, n, lo=0):
    if not isinstance(l, (int, np.integer)) or isinstance(l, bool):
        raise DomainError(f"order must be an integer, got {l!r}")
    if not lo <= l <= n:
        raise DomainError(f"order {l} outside [{lo}, {n}]")


def elementary_all(lam, upto=None) -> np.ndarray:
    """Return ``[sigma_0, ..., sigma_upto]`` of the trailing axis of ``lam``.

    Expands ``prod(1 + lam_i s)`` one factor at a time, so no subsets are
    enumerated. Works on stacks of spectra.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    upto = n if upto is None else upto
    e = np.zeros(lam.shape[:-1] + (upto + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        x = lam[..., i]
        for j in range(min(i + 1, upto), 0, -1):
            e[..., j] += x * e[..., j - 1]
    return e


def sigma(lam, l: int) -> float:
    """sigma_l(lam); sigma_0 is 1."""
    lam = as_spectrum(lam)
    _check_order(l, lam.size)
    return float(elementary_all(lam, l)[l])


def sigma_restricted(lam, l: int, excluded) -> float:
    """sigma_l with the coordinates listed in ``excluded`` set to zero.

    Indices are 1-based, matching the usual ``sigma_{l;i1...ij}`` notation.
    A repeated index makes the value 0 by definition.
    """
    lam = as_spectrum(lam)
    n = lam.size
    _check_order(l, n)
    idx = [int(i) for i in excluded]
    for i in idx:
        if not 1 <= i <= n:
            raise DomainError(f"excluded index {i} outside 1..{n}")
    if len(set(idx)) != len(idx):
        return 0.0
    mu = lam.copy()
    mu[[i - 1 for i in idx]] = 0.0
    return float(elementary_all(mu, l)[l])


@dataclass(frozen=True)
class ConeVerdict:
    k: int
    inside: bool
    margin: float


def in_gamma_k(lam, k: int) -> ConeVerdict:
    """Membership in the open cone {sigma_j > 0 for j = 1..k}."""
    lam = as_spectrum(lam)
    _check_order(k, lam.size, lo=1)
    margin = float(np.min(elementary_all(lam, k)[1:]))
    return ConeVerdict(k=k, inside=margin > 0.0, margin=margin)


def in_closure_gamma_k(lam, k: int, tol: float = CLOSURE_TOL) -> bool:
    return in_gamma_k(lam, k).margin >= -tol


def _principal_minor_sum(H: np.ndarray, k: int) -> np.ndarray:
    n = H.shape[-1]
    if k == 0:
        return np.ones(H.shape[:-2])
    total = np.zeros(H.shape[:-2])
    for idx in itertools.combinations(range(n), k):
        sub = H[..., idx, :][..., :, idx]
        total = total + np.linalg.det(sub)
    return total


def s_k(H, k: int):
    """sigma_k of the eigenvalues of ``H``, as a sum of principal minors.

    Accepts a single matrix (returns a float) or a stack (returns an array).
    """
    H = np.asarray(H, dtype=float)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise DomainError(f"expected square matrices, got shape {H.shape}")
    _check_order(k, H.shape[-1])
    out = _principal_minor_sum(H, k)
    return float(out) if H.ndim == 2 else out


def s_k_all(H, upto: int) -> np.ndarray:
    """Stack ``[S_0(H), ..., S_upto(H)]`` along a new trailing axis."""
    H = np.asarray(H, dtype=float)
    return np.stack([_principal_minor_sum(H, j) for j in range(upto + 1)], axis=-1)


def s_k_grad(H, k: int) -> np.ndarray:
    """Derivative tensor ``dS_k/dH_ij`` with the entries treated as independent.

    Differentiating the principal-minor sum entry by entry collapses to the
    matrix polynomial ``sum_m (-1)^m S_{k-1-m}(H) H^m`` (transposed), which is
    what is evaluated here.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise DomainError(f"expected square matrices, got shape {H.shape}")
    n = H.shape[-1]
    _check_order(k, n)
    eye = np.broadcast_to(np.eye(n), H.shape)
    if k == 0:
        return np.zeros(H.shape)
    lower = s_k_all(H, k - 1)
    grad = np.zeros(H.shape)
    power = eye.copy()
    for m in range(k):
        grad = grad + ((-1) ** m) * lower[..., k - 1 - m, None, None] * power
        power = power @ H
    return np.swapaxes(grad, -1, -2)


def f_and_grad(H, k: int):
    """``F = S_k^(1/k)`` and its gradient ``(1/k) S_k^(1/k - 1) S_k^ij``."""
    H = np.asarray(H, dtype=float)
    sk = s_k(H, k)
    if np.any(np.asarray(sk) <= 0):
        raise ConeError(f"S_{k} <= 0, F undefined")
    F = np.power(sk, 1.0 / k)
    dF = (np.power(sk, 1.0 / k - 1.0) / k)[..., None, None] * s_k_grad(H, k)
    if np.ndim(sk) == 0:
        return float(F), dF
    return F, dF


def euler_identity_residual(H, k: int) -> float:
    """|sum_ij S_k^ij H_ij - k S_k| (zero by homogeneity of degree k)."""
    H = as_sym_matrix(H)
    lhs = np.sum(s_k_grad(H, k) * H, axis=(-1, -2))
    res = np.abs(lhs - k * np.asarray(s_k(H, k)))
    return float(res) if H.ndim == 2 else res


def maclaurin_gap(lam, k: int) -> float:
    """(sigma_{k-1}/C(n,k-1))^(1/(k-1)) - (sigma_k/C(n,k))^(1/k) on Gamma_k.

    For ``k = 1`` the inequality is vacuous and ``sigma_1 / n`` is returned.
    """
    lam = as_spectrum(lam)
    n = lam.size
    verdict = in_gamma_k(lam, k)
    if not verdict.inside:
        raise ConeError(f"spectrum not in Gamma_{k} (margin {verdict.margin:g})")
    e = elementary_all(lam, k)
    if k == 1:
        return float(e[1] / n)
    lower = (e[k - 1] / math.comb(n, k - 1)) ** (1.0 / (k - 1))
    upper = (e[k] / math.comb(n, k)) ** (1.0 / k)
    return float(lower - upper)


def chou_wang_ratio(lam, k: int) -> float:
    """lambda_1 sigma_{k-1;1}(lambda) / sigma_k(lambda), lambda sorted descending."""
    lam = sorted_desc(lam)
    _check_order(k, lam.size, lo=1)
    verdict = in_gamma_k(lam, k)
    if not verdict.inside:
        raise DomainError(f"spectrum not in Gamma_{k}")
    sk = sigma(lam, k)
    if sk <= 0:
        raise DomainError("sigma_k must be positive")
    return lam[0] * sigma_restricted(lam, k - 1, [1]) / sk


def sample_gamma_k(rng: np.random.Generator, n: int, k: int, size: int,
                   low: float = -1.0, high: float = 3.0) -> np.ndarray:
    """Rejection-sample ``size`` spectra in Gamma_k from the box [low, high]^n."""
    out = []
    while sum(len(b) for b in out) < size:
        batch = rng.uniform(low, high, size=(4 * size + 16, n))
        e = elementary_all(batch, k)
        keep = np.all(e[:, 1:] > 0, axis=1)
        out.append(batch[keep])
    return np.concatenate(out)[:size]


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))

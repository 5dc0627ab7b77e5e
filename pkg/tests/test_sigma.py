import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from khessian import sigma as sc
from khessian.errors import ConeError, DomainError

from conftest import random_sym
from oracles import sigma_by_subsets, sk_by_eigenvalues, sk_fd_grad

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def spectra(n_min=1, n_max=6):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(float, n, elements=finite))


class TestSigma:
    def test_small_values(self):
        assert sc.sigma([1, 1, 1], 2) == 3
        assert sc.sigma([1, 2, 3], 2) == 11
        assert sc.sigma([1, 2, 3], 3) == 6
        assert sc.sigma([4, 5], 0) == 1

    @pytest.mark.parametrize("l", [-1, 4, 1.5])
    def test_out_of_range(self, l):
        with pytest.raises(DomainError):
            sc.sigma([1, 2, 3], l)

    def test_matches_subset_enumeration(self, rng):
        for _ in range(200):
            lam = rng.uniform(-3, 3, 5)
            for l in range(6):
                ref = sigma_by_subsets(lam, l)
                assert sc.sigma(lam, l) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    @given(spectra(), st.randoms(use_true_random=False))
    def test_permutation_symmetry(self, lam, r):
        perm = list(range(lam.size))
        r.shuffle(perm)
        for l in range(lam.size + 1):
            a, b = sc.sigma(lam, l), sc.sigma(lam[perm], l)
            scale = max(1.0, sigma_by_subsets(np.abs(lam), l))
            assert abs(a - b) <= 1e-14 * scale * 10

    @given(spectra(n_min=2))
    def test_split_identity(self, lam):
        n = lam.size
        for i in range(1, n + 1):
            for l in range(1, n + 1):
                lhs = sc.sigma(lam, l)
                rhs = sc.sigma_restricted(lam, l, [i]) + lam[i - 1] * sc.sigma_restricted(lam, l - 1, [i])
                scale = max(1.0, sigma_by_subsets(np.abs(lam), l))
                assert abs(lhs - rhs) <= 1e-12 * scale


class TestRestricted:
    def test_examples(self):
        assert sc.sigma_restricted([1, 2, 3], 2, [1]) == 6
        assert sc.sigma_restricted([1, 2, 3], 1, [2, 3]) == 1

    def test_repeated_index_is_zero(self):
        assert sc.sigma_restricted([1, 2, 3], 2, [2, 2]) == 0
        assert sc.sigma_restricted([5, -1, 7, 2], 1, [1, 3, 1]) == 0

    def test_bad_index(self):
        with pytest.raises(DomainError):
            sc.sigma_restricted([1, 2, 3], 2, [4])
        with pytest.raises(DomainError):
            sc.sigma_restricted([1, 2, 3], 2, [0])


class TestCone:
    def test_examples(self):
        assert sc.in_gamma_k([1, 1, 1], 3).inside
        v = sc.in_gamma_k([3, 3, -1], 2)
        assert v.inside and v.margin == 3
        v = sc.in_gamma_k([1, -2, 5], 2)
        assert not v.inside and v.margin == -7

    def test_boundary_is_outside_open_cone(self):
        v = sc.in_gamma_k([1, 0], 2)
        assert v.margin == 0 and not v.inside
        assert sc.in_closure_gamma_k([1, 0], 2)
        assert not sc.in_closure_gamma_k([1, -1e-9], 2)

    @given(spectra(), st.integers(1, 6))
    def test_verdict_consistent(self, lam, k):
        if k > lam.size:
            return
        v = sc.in_gamma_k(lam, k)
        assert v.inside == (v.margin > 0)


class TestSk:
    def test_examples(self):
        assert sc.s_k(np.eye(3), 2) == pytest.approx(3)
        assert sc.s_k(np.diag([1.0, 2.0]), 2) == pytest.approx(2)

    def test_matches_eigenvalue_path(self, rng):
        for _ in range(100):
            n = rng.integers(2, 5)
            H = random_sym(rng, n, 2.0)
            for k in range(1, n + 1):
                assert sc.s_k(H, k) == pytest.approx(sk_by_eigenvalues(H, k), rel=1e-10, abs=1e-10)

    def test_orthogonal_invariance(self, rng):
        for _ in range(50):
            n = rng.integers(2, 5)
            H = random_sym(rng, n)
            Q = sc.random_orthogonal(rng, n)
            for k in range(1, n + 1):
                a, b = sc.s_k(H, k), sc.s_k(Q.T @ H @ Q, k)
                assert abs(a - b) <= 1e-10 * max(1.0, abs(a))

    def test_repeated_eigenvalues(self):
        H = np.diag([2.0, 2.0, 2.0])
        assert sc.s_k(H, 3) == pytest.approx(8)
        np.testing.assert_allclose(sc.s_k_grad(H, 3), 4 * np.eye(3))

    def test_stacked(self, rng):
        Hs = np.stack([random_sym(rng, 3) for _ in range(7)])
        vals = sc.s_k(Hs, 2)
        assert vals.shape == (7,)
        for H, v in zip(Hs, vals):
            assert v == pytest.approx(sc.s_k(H, 2))


class TestGrad:
    def test_examples(self):
        np.testing.assert_allclose(sc.s_k_grad(np.diag([1.0, 2.0]), 2), np.diag([2.0, 1.0]))

    def test_k1_is_identity(self, rng):
        H = random_sym(rng, 4)
        np.testing.assert_allclose(sc.s_k_grad(H, 1), np.eye(4))

    def test_finite_differences(self, rng):
        for _ in range(40):
            n = rng.integers(2, 5)
            H = random_sym(rng, n)
            for k in range(1, n + 1):
                fd = sk_fd_grad(lambda A: sk_by_eigenvalues(A, k), H)
                got = sc.s_k_grad(H, k)
                assert np.max(np.abs(got - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))

    def test_diagonal_entries_are_restricted_sigmas(self, rng):
        for lam in sc.sample_gamma_k(rng, 4, 3, 50):
            G = sc.s_k_grad(np.diag(lam), 3)
            for i in range(4):
                assert G[i, i] == pytest.approx(sc.sigma_restricted(lam, 2, [i + 1]))
                assert G[i, i] > 0

    def test_euler_identity(self, rng):
        assert sc.euler_identity_residual(np.diag([1.0, 2.0]), 2) == 0
        for k in (1, 2, 3):
            assert sc.euler_identity_residual(np.zeros((3, 3)), k) == 0
        for _ in range(1000):
            n = int(rng.integers(1, 5))
            H = random_sym(rng, n, 2.0)
            k = int(rng.integers(1, n + 1))
            assert sc.euler_identity_residual(H, k) <= 1e-10 * (1 + abs(sc.s_k(H, k)))


class TestF:
    def test_examples(self):
        F, dF = sc.f_and_grad(np.diag([1.0, 2.0]), 2)
        assert F == pytest.approx(math.sqrt(2))
        np.testing.assert_allclose(dF, np.diag([2.0, 1.0]) / (2 * math.sqrt(2)))
        for n in (2, 3, 4):
            for k in range(1, n + 1):
                F, _ = sc.f_and_grad(np.eye(n), k)
                assert F == pytest.approx(math.comb(n, k) ** (1 / k))

    def test_outside_cone(self):
        with pytest.raises(ConeError):
            sc.f_and_grad(np.diag([1.0, -1.0]), 2)

    def test_finite_differences(self, rng):
        for lam in sc.sample_gamma_k(rng, 3, 2, 30):
            Q = sc.random_orthogonal(rng, 3)
            H = Q @ np.diag(lam) @ Q.T
            H = (H + H.T) / 2
            fd = sk_fd_grad(lambda A: sk_by_eigenvalues(A, 2) ** 0.5, H)
            _, dF = sc.f_and_grad(H, 2)
            assert np.max(np.abs(dF - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))

    def test_concavity(self, rng):
        for n, k in [(2, 2), (3, 2), (3, 3), (4, 2)]:
            lams = sc.sample_gamma_k(rng, n, k, 200)
            for a, b in zip(lams[::2], lams[1::2]):
                H1 = _rotate(rng, a)
                H2 = _rotate(rng, b)
                th = rng.uniform(0.01, 0.99)
                F = lambda H: sc.f_and_grad(H, k)[0]
                assert F(th * H1 + (1 - th) * H2) >= th * F(H1) + (1 - th) * F(H2) - 1e-10


def _rotate(rng, lam):
    Q = sc.random_orthogonal(rng, len(lam))
    H = Q @ np.diag(lam) @ Q.T
    return (H + H.T) / 2


class TestMaclaurin:
    def test_examples(self):
        assert sc.maclaurin_gap([1, 1, 1], 2) == pytest.approx(0, abs=1e-15)
        assert sc.maclaurin_gap([1, 2, 3], 2) == pytest.approx(2 - math.sqrt(11 / 3), abs=1e-12)
        assert sc.maclaurin_gap([1, 2, 3], 1) == pytest.approx(2)

    def test_outside(self):
        with pytest.raises(ConeError):
            sc.maclaurin_gap([1, -2, 5], 2)

    def test_sweep(self, rng):
        for n in (2, 3, 4, 5):
            for k in range(1, n + 1):
                for lam in sc.sample_gamma_k(rng, n, k, 1000 // n):
                    assert sc.maclaurin_gap(lam, k) >= -1e-12


class TestChouWang:
    def test_examples(self):
        assert sc.chou_wang_ratio([1, 1, 1], 2) == pytest.approx(2 / 3)
        assert sc.chou_wang_ratio([1, 1], 2) == pytest.approx(1)

    def test_unsorted_input_uses_sorted_view(self):
        assert sc.chou_wang_ratio([1, 3, 2], 2) == sc.chou_wang_ratio([3, 2, 1], 2)

    def test_outside(self):
        with pytest.raises(DomainError):
            sc.chou_wang_ratio([1, -2, 5], 2)

    def test_positive_on_samples(self, rng):
        lams = sc.sample_gamma_k(rng, 3, 2, 2000)
        ratios = [sc.chou_wang_ratio(l, 2) for l in lams]
        assert min(ratios) > 0

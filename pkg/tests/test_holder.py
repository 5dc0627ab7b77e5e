import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from khessian.errors import DomainError
from khessian.grid import Cylinder, SpaceTimeDomain, build_grid
from khessian.holder import holder_seminorm, pairwise_seminorm
from khessian.solver import SolutionField, field_from_expression

from oracles import holder_pairs_naive


def _cloud(rng, P, n=2):
    # lattice-like coordinates so that repeated points and equal times occur
    x = rng.integers(-4, 5, size=(P, n)) * 0.25
    t = -rng.integers(0, 4, size=P) * 0.0625
    return x, t


def test_constant_field_is_zero(rng):
    x, t = _cloud(rng, 30)
    assert pairwise_seminorm(x, t, np.full(30, 3.7), 0.5) == 0.0


def test_ties_across_chunks(rng):
    # a linear field on a lattice has many maximizing pairs, spread over chunks
    g = np.arange(40) * 0.125
    x = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    t = np.zeros(len(x))
    f = x[:, 0].copy()
    ref = holder_pairs_naive(list(zip(x.tolist(), t.tolist())), f.tolist(), 0.5)
    assert pairwise_seminorm(x, t, f, 0.5) == ref


def test_two_nodes():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert pairwise_seminorm(x, np.zeros(2), x[:, 0], 0.3) == 1.0


def test_matches_brute_force_exactly(rng):
    for _ in range(50):
        P = int(rng.integers(2, 60))
        x, t = _cloud(rng, P)
        f = rng.normal(size=P)
        alpha = float(rng.uniform(0.05, 0.95))
        ref = holder_pairs_naive(list(zip(x.tolist(), t.tolist())), f.tolist(), alpha)
        assert pairwise_seminorm(x, t, f, alpha) == ref


def test_bad_arguments(rng):
    x, t = _cloud(rng, 5)
    with pytest.raises(DomainError):
        pairwise_seminorm(x, t, np.zeros(5), 1.0)
    with pytest.raises(DomainError):
        pairwise_seminorm(x[:1], t[:1], np.zeros(1), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3))
def test_seminorm_axioms(seed, c):
    rng = np.random.default_rng(seed)
    x, t = _cloud(rng, 25)
    f, g = rng.normal(size=25), rng.normal(size=25)
    a = 0.4
    sf, sg = pairwise_seminorm(x, t, f, a), pairwise_seminorm(x, t, g, a)
    assert pairwise_seminorm(x, t, c * f, a) == pytest.approx(abs(c) * sf, rel=1e-12, abs=1e-300)
    assert pairwise_seminorm(x, t, f + g, a) <= sf + sg + 1e-12


def test_field_seminorms():
    dom = SpaceTimeDomain(Cylinder(1.0, -0.25), 2)
    grid = build_grid(dom, 0.25, 0.125)
    quad = field_from_expression("(x1^2+x2^2)/2 - t", grid, 2)
    s = holder_seminorm(quad, 0.5)
    assert s.semi_d2u == pytest.approx(0.0, abs=1e-12)
    assert s.semi_ut == pytest.approx(0.0, abs=1e-12)
    assert s.semi_u > 0
    const = SolutionField(grid, np.full(quad.u.shape, 2.0), 2)
    s = holder_seminorm(const, 0.5)
    assert (s.semi_u, s.semi_d2u, s.semi_ut) == (0.0, 0.0, 0.0)
    assert s.full_norm == 2.0
    with pytest.raises(DomainError):
        holder_seminorm(const, 0.5, np.zeros(grid.interior.shape, dtype=bool))

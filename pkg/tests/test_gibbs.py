import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kackawasaki import gibbs
from kackawasaki.lattice import build_kernel


@pytest.fixture(scope="module")
def kern():
    return build_kernel("gaussian", 0.1, 40)


def test_singleton_sector(kern):
    mu = gibbs.enumerate_block(1, 1.0, kern, 1.0)
    assert mu.codes.size == 1 and mu.weights[0] == 1.0


def test_uniform_at_infinite_temperature(kern):
    mu = gibbs.enumerate_block(1, 1 / 3, kern, 0.0)
    assert mu.codes.size == 3 and np.allclose(mu.weights, 1 / 3, atol=1e-15)


def test_boltzmann_ratios(kern):
    mu = gibbs.enumerate_block(2, 0.2, kern, 1.0)
    assert abs(mu.weights.sum() - 1) < 1e-14
    s = mu.spins.astype(float)
    u = np.arange(-2, 3)
    K = np.array([[kern.kappa(a - b) for b in u] for a in u])
    H = np.array([-0.5 * x @ K @ x for x in s])
    for i in range(len(H)):
        for j in range(len(H)):
            assert abs(mu.weights[i] / mu.weights[j] - math.exp(-(H[i] - H[j]))) < 1e-12


def test_phi_examples(kern):
    for m in (-1.0, 1.0):
        for ell in (1, 2, 3):
            assert gibbs.phi(ell, m, kern, 0.7) == 0.0
    assert abs(gibbs.phi(1, 1 / 3, kern, 0.0) - 8 / 3) < 1e-14
    # an odd block of 5 has no m = 0 level; m = +-0.2 are the nearest
    for m in (0.2, -0.2):
        assert abs(gibbs.phi(2, m, kern, 0.0) - 2.5 * (1 - m * m)) < 1e-14
    with pytest.raises(gibbs.SectorError):
        gibbs.phi(2, 0.0, kern, 0.0)


def test_two_point_by_enumeration(kern):
    mu = gibbs.enumerate_block(1, 1 / 3, kern, 0.0)
    pair = float(np.dot(mu.weights, mu.spins[:, 1] * mu.spins[:, 2]))
    assert abs(pair - (-1 / 3)) < 1e-15
    assert abs(gibbs.two_point(1, 1 / 3) - pair) < 1e-15
    assert gibbs.d0sq_closed_form(3, 1.0) == 0.0 and gibbs.d0sq_closed_form(3, -1.0) == 0.0


def test_closed_form_all_levels(kern):
    for L in range(1, 5):
        for m in gibbs.magnetization_levels(L):
            assert abs(gibbs.phi(L, m, kern, 0.0) - gibbs.d0sq_closed_form(L, m)) < 1e-12
        a0, a2 = gibbs.closure_coefficients(L)
        m = gibbs.magnetization_levels(L)
        assert np.allclose(a0 + a2 * m**2, gibbs.d0sq_closed_form(L, m))


def test_phi_table_matches_pointwise(kern):
    t = gibbs.phi_table(2, kern, 1.0)
    for m in gibbs.magnetization_levels(2):
        assert abs(t(m) - gibbs.phi(2, m, kern, 1.0)) < 1e-14


def test_tv_examples(kern):
    a = gibbs.enumerate_block(3, 1 / 7, kern, 1.0)
    assert gibbs.tv_distance(a, a) == 0.0
    c = gibbs.enumerate_block(3, 1 / 7, kern, 0.0, "canonical")
    x = gibbs.enumerate_block(3, 1 / 7, kern, 0.0, "auxiliary")
    assert gibbs.tv_distance(c, x) == 0.0
    with pytest.raises(gibbs.SectorError):
        gibbs.tv_distance(a, gibbs.enumerate_block(3, 3 / 7, kern, 1.0))


def test_gc_mixture(kern):
    gc = gibbs.enumerate_block(2, None, kern, 0.8, "grand_canonical")
    assert np.max(np.abs(gibbs.grand_canonical_mixture(2, kern, 0.8) - gc.weights)) < 1e-14


def test_dirichlet_and_fisher_vanish(kern):
    assert gibbs.dirichlet_form(2, kern, 1.0, np.full(32, 3.0)) == 0.0
    assert gibbs.fisher(2, kern, 1.0, np.ones(32)) == 0.0


def test_fisher_hand_expansion(kern):
    a = 0.3
    f = np.ones(8)
    f[1], f[2] = 1 + a, 1 - a  # (+,-,-) and (-,+,-)
    got = gibbs.fisher(1, kern, 0.0, f)
    # each term: gc weight 1/8, rate 1/2, prefactor 1/4
    expect = (2 * (math.sqrt(1 - a) - math.sqrt(1 + a)) ** 2 + 2 * (1 - math.sqrt(1 - a)) ** 2) / 64
    assert abs(got - expect) < 1e-15


def test_fisher_rejects_unnormalized(kern):
    with pytest.raises(ValueError):
        gibbs.fisher(1, kern, 0.0, np.full(8, 2.0))


def test_entropy_inequality_trivial_cases(kern):
    mu = gibbs.enumerate_block(2, 0.2, kern, 1.0)
    F = np.random.default_rng(0).standard_normal(mu.codes.size)
    lhs, rhs = gibbs.entropy_inequality_check(mu, mu, F, 1.0)
    assert rhs - lhs >= -1e-15
    nu = gibbs.enumerate_block(2, 0.2, kern, 0.0)
    lhs, rhs = gibbs.entropy_inequality_check(mu, nu, np.full(mu.codes.size, 2.5), 0.7)
    assert abs(lhs - 2.5) < 1e-14
    assert abs(rhs - (2.5 + gibbs.relative_entropy(mu.weights, nu.weights) / 0.7)) < 1e-12


def test_entropy_inequality_random_trials(kern):
    rng = np.random.default_rng(7)
    n = gibbs.sector_codes(5, 3).size
    for _ in range(10_000):
        mu = rng.dirichlet(np.ones(n))
        nu = rng.dirichlet(np.ones(n))
        F = rng.standard_normal(n) * 3
        a = rng.choice([0.5, 1.0, 2.0])
        lhs, rhs = gibbs.entropy_inequality_check(mu, nu, F, a)
        assert lhs <= rhs + 1e-12


@given(st.integers(1, 4), st.floats(0.0, 2.0))
def test_weights_normalized(ell, beta):
    k = build_kernel("triangular", 0.2, 10)
    for m in gibbs.magnetization_levels(ell):
        assert abs(gibbs.enumerate_block(ell, m, k, beta).weights.sum() - 1) < 1e-14


def test_oversized_block_rejected(kern):
    with pytest.raises(ValueError):
        gibbs.enumerate_block(12, 1 / 25, kern, 0.0)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from mfglauber.model_core import (
    ModelSpec,
    bc_rate_J,
    check_simplex,
    clgf_bc,
    counts_of,
    grad_H,
    hamiltonian_density,
    legendre_transform,
    log_mgf_gamma,
    q_operator,
    random_simplex_points,
    softmax,
)

RNG = np.random.default_rng(20240611)


def direct_clgf(beta, t):
    # log E[e^{t s}] for the law proportional to e^{-beta s^2} on {-1, 0, 1}
    return math.log((1 + 2 * math.exp(-beta) * math.cosh(t)) / (1 + 2 * math.exp(-beta)))


def test_modelspec_validation():
    with pytest.raises(ValueError):
        ModelSpec.cwp(1, 1.0)
    with pytest.raises(ValueError):
        ModelSpec.gcwp(3, 1.5, 1.0)
    with pytest.raises(ValueError):
        ModelSpec("bc", 1.0, q=3, K=None)
    with pytest.raises(ValueError):
        ModelSpec.cwp(3, -0.1)
    m = ModelSpec.blume_capel(0.5, 1.0)
    assert m.q == 3 and not m.separable
    assert ModelSpec.cwp(3, 1.0).with_beta(2.0).beta == 2.0


def test_hamiltonian_examples():
    assert hamiltonian_density(ModelSpec.gcwp(3, 2, 1.0), [1 / 3] * 3) == pytest.approx(-1 / 6, abs=1e-15)
    assert hamiltonian_density(ModelSpec.cwp(2, 1.0), [1, 0]) == pytest.approx(-0.5, abs=1e-15)
    with pytest.raises(ValueError):
        hamiltonian_density(ModelSpec.cwp(3, 1.0), [0.5, 0.6, 0.1])


def test_bc_hamiltonian_direct():
    K = 0.7
    m = ModelSpec.blume_capel(K, 1.0)
    z = np.array([0.2, 0.5, 0.3])  # proportions of spins -1, 0, +1
    mean_sq = 0.2 + 0.3
    mean = 0.3 - 0.2
    assert hamiltonian_density(m, z) == pytest.approx(mean_sq - K * mean**2, abs=1e-15)


def test_grad_and_q_examples():
    np.testing.assert_allclose(grad_H(ModelSpec.gcwp(3, 2, 1.0), [0.5, 0.3, 0.2]), [-0.5, -0.3, -0.2])
    np.testing.assert_allclose(grad_H(ModelSpec.gcwp(3, 3, 1.0), [1 / 3] * 3), [-1 / 9] * 3)
    z = random_simplex_points(3, 5, RNG)
    for zz in z:
        np.testing.assert_allclose(q_operator(ModelSpec.gcwp(3, 2, 1.0), zz), [-1, -1, -1])
    np.testing.assert_allclose(q_operator(ModelSpec.gcwp(3, 3, 1.0), [0.5, 0.3, 0.2]), [-1.0, -0.6, -0.4])


@pytest.mark.parametrize("m", [ModelSpec.gcwp(3, 2, 1.0), ModelSpec.gcwp(4, 3, 1.0),
                               ModelSpec.gcwp(3, 2.5, 1.0), ModelSpec.blume_capel(0.9, 1.0)])
def test_derivatives_match_finite_differences(m):
    # H extends smoothly off the simplex, so coordinate-wise central differences apply
    h = 1e-5
    Z = random_simplex_points(m.q, 100, RNG, margin=1e-3)
    worst_g = worst_q = 0.0
    for z in Z:
        g = grad_H(m, z)
        fd = np.empty(m.q)
        for k in range(m.q):
            e = np.zeros(m.q)
            e[k] = h
            fd[k] = (_H_raw(m, z + e) - _H_raw(m, z - e)) / (2 * h)
        worst_g = max(worst_g, np.abs(g - fd).max())
        Q = q_operator(m, z)
        diag = np.empty(m.q)
        for k in range(m.q):
            e = np.zeros(m.q)
            e[k] = h
            diag[k] = (_H_raw(m, z + e) - 2 * _H_raw(m, z) + _H_raw(m, z - e)) / h**2
        worst_q = max(worst_q, np.abs(Q - diag).max())
    assert worst_g < 1e-6
    assert worst_q < 1e-4


def _H_raw(m, z):
    if m.family == "bc":
        return z[0] + z[2] - m.K * (z[2] - z[0]) ** 2
    return -np.sum(z**m.r) / m.r


def test_cwp_equals_gcwp_r2():
    Z = random_simplex_points(4, 200, RNG)
    a, b = ModelSpec.cwp(4, 1.3), ModelSpec.gcwp(4, 2, 1.3)
    assert np.abs(hamiltonian_density(a, Z) - hamiltonian_density(b, Z)).max() <= 1e-12
    for z in Z[:20]:
        assert np.abs(grad_H(a, z) - grad_H(b, z)).max() <= 1e-12
        assert np.abs(q_operator(a, z) - q_operator(b, z)).max() <= 1e-12


def test_log_mgf_examples():
    assert log_mgf_gamma(3, [0, 0, 0]) == 0.0
    assert log_mgf_gamma(2, [0.7, 0.7]) == pytest.approx(0.7, abs=1e-15)
    assert log_mgf_gamma(3, [1, 0, 0]) == pytest.approx(math.log((math.e + 2) / 3), abs=1e-15)
    assert np.isfinite(log_mgf_gamma(3, [1e4, 0, -1e4]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-100, 100))
def test_gamma_shift_invariance(z, c):
    z = np.array(z)
    assert log_mgf_gamma(3, z + c) == pytest.approx(log_mgf_gamma(3, z) + c, abs=1e-12 * (1 + abs(c)))
    s = softmax(z)
    assert s.sum() == pytest.approx(1.0, abs=1e-12)


def test_clgf_examples():
    assert clgf_bc(1.0, 0.0, 0) == 0.0
    assert clgf_bc(1.0, 0.0, 1) == 0.0
    assert clgf_bc(math.log(4), 0.0, 2) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        clgf_bc(1.0, 0.0, 3)


@pytest.mark.parametrize("beta", [0.3, 1.0, 2.0, 4.0])
def test_clgf_against_direct_formula(beta):
    ts = np.linspace(-8, 8, 81)
    c = clgf_bc(beta, ts, 0)
    direct = np.array([direct_clgf(beta, t) for t in ts])
    np.testing.assert_allclose(c, direct, atol=1e-12)
    h = 1e-4
    fd1 = (clgf_bc(beta, ts + h, 0) - clgf_bc(beta, ts - h, 0)) / (2 * h)
    np.testing.assert_allclose(clgf_bc(beta, ts, 1), fd1, atol=1e-7)
    fd2 = (clgf_bc(beta, ts + h, 1) - clgf_bc(beta, ts - h, 1)) / (2 * h)
    np.testing.assert_allclose(clgf_bc(beta, ts, 2), fd2, atol=1e-7)


def test_clgf_large_arguments_stay_finite():
    t = np.array([-1e4, 1e4])
    assert np.all(np.isfinite(clgf_bc(2.0, t, 0)))
    np.testing.assert_allclose(clgf_bc(2.0, t, 1), [-1.0, 1.0])
    assert np.all(clgf_bc(2.0, t, 2) >= 0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 6.0), st.floats(-30, 30))
def test_clgf_parity(beta, t):
    assert abs(clgf_bc(beta, t, 0) - clgf_bc(beta, -t, 0)) <= 1e-12
    assert abs(clgf_bc(beta, t, 1) + clgf_bc(beta, -t, 1)) <= 1e-12
    assert abs(clgf_bc(beta, t, 2) - clgf_bc(beta, -t, 2)) <= 1e-12


def test_legendre_examples():
    f = lambda x: x**2 / 2
    assert legendre_transform(f, 1.0, -10, 10) == pytest.approx(0.5, abs=1e-10)
    assert legendre_transform(f, 20.0, -10, 10) == math.inf
    assert bc_rate_J(math.log(4), 0.0) == pytest.approx(0.0, abs=1e-12)


def test_rate_derivative_is_inverse_of_clgf_derivative():
    beta, z, h = 2.0, 0.3, 1e-4
    dJ = (bc_rate_J(beta, z + h) - bc_rate_J(beta, z - h)) / (2 * h)
    t_star = brentq(lambda t: clgf_bc(beta, t, 1) - z, -20, 20, xtol=1e-14)
    assert dJ == pytest.approx(t_star, abs=1e-5)


def test_rate_matches_closed_conjugate():
    # J(z) = t* z - c(t*) with c'(t*) = z
    beta = 1.0
    for z in (-0.6, 0.1, 0.45):
        t_star = brentq(lambda t: clgf_bc(beta, t, 1) - z, -20, 20, xtol=1e-14)
        assert bc_rate_J(beta, z) == pytest.approx(t_star * z - direct_clgf(beta, t_star), abs=1e-10)


def test_simplex_helpers():
    with pytest.raises(ValueError):
        check_simplex([0.5, 0.5], q=3)
    with pytest.raises(ValueError):
        counts_of([0, 3], 3)
    np.testing.assert_array_equal(counts_of([0, 2, 2, 1], 3), [1, 1, 2])

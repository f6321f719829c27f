import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import xlogy

from mfglauber import equilibrium as eq
from mfglauber.equilibrium import MultiPhaseError, OutOfRegimeWarning
from mfglauber.glauber import g_vector
from mfglauber.model_core import ModelSpec, clgf_bc, random_simplex_points, uniform_point


def grid_points(q, N):
    pts = [c for c in np.ndindex(*(N + 1,) * (q - 1)) if sum(c) <= N]
    return np.array([list(c) + [N - sum(c)] for c in pts], float) / N


def entropy_energy(beta, z, r=2.0):
    # R(z | uniform) + beta H(z), evaluated from scratch
    q = z.shape[-1]
    return np.sum(xlogy(z, z * q), axis=-1) - beta * np.sum(z**r, axis=-1) / r


def polished_min(F, q=3, N=200):
    # grid scan, then Nelder-Mead over the first q-1 coordinates
    Z = grid_points(q, N)
    z0 = Z[np.argmin(F(Z))]

    def f(x):
        z = np.append(x, 1 - x.sum())
        if np.any(z < 0):
            return np.inf
        return float(F(z))

    res = minimize(f, z0[:-1], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    return min(res.fun, float(F(z0)))


def positive_critical_points(beta, K, mesh=1e-4):
    z = np.arange(mesh, 1.0 + mesh / 2, mesh)
    a = 2 * beta * K
    d = a * z - a * clgf_bc(beta, a * z, 1)
    return int(np.sum(np.sign(d[:-1]) != np.sign(d[1:])))


# --- Blume-Capel free energy and rate function ---


def test_free_energy_bc_examples():
    assert eq.free_energy_bc(0.7, 1.3, 0.0) == 0.0
    beta, K, z = 1.0, 0.5, 0.5
    expected = beta * K * z**2 - clgf_bc(beta, 2 * beta * K * z, 0)
    assert eq.free_energy_bc(beta, K, z) == pytest.approx(expected, abs=1e-15)
    assert eq.free_energy_bc(beta, K, z) == pytest.approx(0.125 - clgf_bc(1.0, 0.5, 0), abs=1e-15)


def test_rate_function_bc_subcritical(bc_rapid_K):
    assert eq.rate_function_bc(1.0, bc_rapid_K, 0.0) == pytest.approx(0.0, abs=1e-9)
    z = np.linspace(-0.9, 0.9, 37)
    I = eq.rate_function_bc(1.0, bc_rapid_K, z)
    assert np.all(I >= 0)
    assert np.all(I[np.abs(z) > 0.05] > 1e-4)


def test_rate_function_bc_zero_on_macrostates():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfRegimeWarning)
        K = 1.2 * eq.kc2(1.0)
    ph = eq.equilibrium_macrostates(ModelSpec.blume_capel(K, 1.0))
    for z in ph.minimizers:
        assert eq.rate_function_bc(1.0, K, z) == pytest.approx(0.0, abs=1e-6)
    assert eq.rate_function_bc(1.0, K, 0.0) > 1e-4


# --- critical values for Blume-Capel ---


def test_kc2_examples():
    assert eq.kc2(math.log(4)) == pytest.approx(6 / (4 * math.log(4)), abs=1e-12)
    assert eq.kc2(math.log(4)) == pytest.approx(1.08202, abs=1e-5)
    assert eq.kc2(1.0) == pytest.approx((math.e + 2) / 4, abs=1e-12)
    with pytest.warns(OutOfRegimeWarning):
        eq.kc2(2.0)


@pytest.mark.parametrize("beta", [0.2, 0.5, 1.0, math.log(4)])
def test_kc2_identity(beta):
    assert eq.kc2(beta) == pytest.approx(1 / (2 * beta * clgf_bc(beta, 0.0, 2)), rel=1e-14)


def test_k1_residuals_and_probe():
    K, z, res = eq.k1(2.0, full_output=True)
    assert z > 0
    assert res["G1"] < 1e-9 and res["G2"] < 1e-9
    assert positive_critical_points(2.0, K * (1 - 1e-3)) == 0
    assert positive_critical_points(2.0, K * (1 + 1e-3)) == 2


def test_kc1_residual_and_phases():
    K1 = eq.k1(2.0)
    Kc, z, res = eq.kc1(2.0, full_output=True)
    assert res["depth"] < 1e-9 and z > 0
    assert K1 < Kc
    above = eq.equilibrium_macrostates(ModelSpec.blume_capel(Kc * 1.01, 2.0))
    assert len(above.minimizers) == 2
    assert above.minimizers[0] < 0 < above.minimizers[1]
    assert above.minimizers[0] == pytest.approx(-above.minimizers[1], abs=1e-9)
    Kmid = 0.5 * (K1 + Kc)
    mid = eq.equilibrium_macrostates(ModelSpec.blume_capel(Kmid, 2.0))
    assert mid.minimizers == [0.0]
    wells = eq.local_minima_bc(2.0, Kmid)
    positive = [(v, p) for v, p in wells if p > 1e-3]
    assert len(wells) == 3 and len(positive) == 1
    assert positive[0][0] > 0


@pytest.mark.parametrize("solver", [eq.k1, eq.kc1])
def test_first_order_solvers_refuse_below_log4(solver):
    with pytest.raises(ValueError):
        solver(1.0)
    with pytest.raises(ValueError):
        solver(math.log(4))


def test_wc_examples():
    assert eq.wc(math.log(4)) == pytest.approx(0.0, abs=1e-7)
    assert eq.wc(2.0) == pytest.approx(1.8155, abs=1e-4)
    assert eq.wc(2.0) == pytest.approx(math.acosh(0.5 * math.exp(2) - 4 * math.exp(-2)), abs=1e-14)
    with pytest.raises(ValueError):
        eq.wc(1.0)


def test_wc_is_inflection_of_clgf_derivative():
    beta, h = 2.0, 1e-3
    w = np.arange(0.05, 4.0, h)
    third = (clgf_bc(beta, w + h, 2) - clgf_bc(beta, w - h, 2)) / (2 * h)
    flip = w[np.flatnonzero(np.diff(np.sign(third)) != 0)]
    assert len(flip) == 1
    assert flip[0] == pytest.approx(eq.wc(beta), abs=1e-3)


# --- Potts-type families ---


def test_free_energy_general_minimiser_cwp3():
    m = ModelSpec.cwp(3, 1.0)
    Z = grid_points(3, 200)
    G = eq.free_energy_general(m, Z)
    assert np.abs(Z[np.argmin(G)] - 1 / 3).max() < 1e-2
    ph = eq.equilibrium_macrostates(m)
    assert len(ph.minimizers) == 1
    assert np.abs(ph.minimizers[0] - uniform_point(3)).max() < 1e-4


@pytest.mark.parametrize("beta", np.linspace(0.5, 4.5, 10))
def test_free_energy_minimum_matches_entropy_energy(beta):
    m = ModelSpec.cwp(3, float(beta))
    g_min = polished_min(lambda Z: eq.free_energy_general(m, Z))
    rf_min = polished_min(lambda Z: entropy_energy(beta, Z))
    assert abs(g_min - rf_min) < 1e-4


def test_rate_function_general():
    m = ModelSpec.cwp(3, 1.0)
    assert eq.rate_function_general(m, uniform_point(3)) == pytest.approx(0.0, abs=1e-9)
    assert eq.relative_entropy_uniform(uniform_point(3)) == pytest.approx(0.0, abs=1e-15)
    z = np.array([0.5, 0.3, 0.2])
    inf = entropy_energy(1.0, grid_points(3, 300)).min()
    assert eq.rate_function_general(m, z) == pytest.approx(entropy_energy(1.0, z) - inf, abs=1e-6)
    Z = random_simplex_points(3, 200, np.random.default_rng(5))
    assert np.all(eq.rate_function_general(m, Z) >= 0)


def test_equilibrium_macrostates_bc():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfRegimeWarning)
        kc = eq.kc2(1.0)
    assert eq.equilibrium_macrostates(ModelSpec.blume_capel(0.9 * kc, 1.0)).minimizers == [0.0]
    ph = eq.equilibrium_macrostates(ModelSpec.blume_capel(1.2 * kc, 1.0))
    assert len(ph.minimizers) == 2 and ph.minimizers[1] > 0
    assert ph.minimizers[0] == pytest.approx(-ph.minimizers[1], abs=1e-6)


def test_equilibrium_macrostates_cwp(gcwp_critical):
    bc = gcwp_critical[(3, 2)][0]
    sub = eq.equilibrium_macrostates(ModelSpec.cwp(3, 0.9 * bc))
    assert len(sub.minimizers) == 1
    assert np.abs(sub.minimizers[0] - 1 / 3).max() < 1e-4
    sup = eq.equilibrium_macrostates(ModelSpec.cwp(3, 1.2 * bc))
    pts = np.array(sup.minimizers)
    assert len(pts) == 3
    # closed under coordinate permutations
    for p in pts:
        for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0)]:
            assert np.abs(pts - p[list(perm)]).sum(axis=1).min() < 1e-6
    # each minimiser is a fixed point of the update law
    for p in pts:
        np.testing.assert_allclose(g_vector(ModelSpec.cwp(3, 1.2 * bc), p), p, atol=1e-5)
    with pytest.raises(MultiPhaseError) as info:
        eq.unique_macrostate(ModelSpec.cwp(3, 1.2 * bc))
    assert len(info.value.minimizers) == 3


def test_beta_c_gcwp(gcwp_critical):
    assert gcwp_critical[(3, 2)][0] == pytest.approx(4 * math.log(2), abs=1e-3)
    # Potts closed form 2(q-1)/(q-2) log(q-1) at q = 4
    assert gcwp_critical[(4, 2)][0] == pytest.approx(3 * math.log(3), abs=1e-3)


def test_mean_field_fixed_point_at_zero():
    for beta in (0.5, 2.0, 5.0):
        assert eq.mean_field_rhs(0.0, beta, 3, 2) == 0.0


def test_beta_c_migration_q2_r3():
    bc, (lo, hi) = eq.beta_c_gcwp(2, 3, full_output=True)
    N = eq._default_grid_N(2)
    assert hi - lo < 1e-3
    assert not eq._ordered(ModelSpec.gcwp(2, 3, lo), N)
    assert eq._ordered(ModelSpec.gcwp(2, 3, hi), N)


def test_beta_s_le_beta_c(gcwp_critical):
    for (q, r), (bc, bs) in gcwp_critical.items():
        assert bs <= bc + 1e-3


def test_beta_s_predicate(beta_s_32):
    assert eq.beta_s_margin(3, 2, 0.5 * beta_s_32)[0] < 0
    margin, witness = eq.beta_s_margin(3, 2, 1.05 * beta_s_32)
    assert margin > 0 and witness[0] > 1 / 3


def test_local_contraction_limit():
    assert eq.local_contraction_limit(3, 2, 2.0) == pytest.approx(2 / 3, abs=1e-15)


def test_local_contraction_limit_below_one(beta_s_32):
    assert eq.local_contraction_limit(3, 2, 0.99 * beta_s_32) < 1


@pytest.mark.parametrize("q,r,beta", [(3, 2, 2.0), (3, 3, 2.5), (4, 2, 1.5)])
def test_local_contraction_limit_directional(q, r, beta):
    m = ModelSpec.gcwp(q, r, beta)
    u = uniform_point(q)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        v = rng.normal(size=q)
        v -= v.mean()
        v /= np.abs(v).sum()
        z = u + 1e-4 * v
        worst = max(worst, np.abs(g_vector(m, z) - g_vector(m, u)).sum() / 1e-4)
    assert worst == pytest.approx(eq.local_contraction_limit(q, r, beta), abs=1e-3)


def test_critical_values_bundles():
    cv = eq.critical_values_bc(1.0)
    assert cv.kc2 == pytest.approx((math.e + 2) / 4) and cv.k1 is None
    cv = eq.critical_values_bc(2.0)
    assert cv.k1 < cv.kc1 and cv.kc2 is None and cv.wc == pytest.approx(eq.wc(2.0))

import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from mfglauber import equilibrium as eq
from mfglauber.glauber import LumpedChain, full_chain_build, lumped_chain_build
from mfglauber.mixing_lab import (
    bottleneck_scan,
    conductance,
    fit_growth,
    mixing_profile,
    relaxation_time,
    scaling_sweep,
    spectral_bounds,
    spectral_gap,
    t_mix_exact,
    tv_distance,
)
from mfglauber.model_core import ModelSpec, counts_of


def toy_chain(P, pi):
    P = sp.csr_matrix(np.asarray(P, float))
    pi = np.asarray(pi, float)
    states = np.array([[1, 0], [0, 1]] if len(pi) == 2 else [[k] for k in range(len(pi))])
    return LumpedChain(ModelSpec.cwp(2, 0.0), 1, states, P, pi, np.log(pi))


@pytest.fixture(scope="module")
def bc20(bc_rapid_K):
    return lumped_chain_build(ModelSpec.blume_capel(bc_rapid_K, 1.0), 20)


@pytest.fixture(scope="module")
def profile20(bc20):
    return mixing_profile(bc20, eps_list=(0.1, 0.25, 0.5))


def test_tv_examples():
    mu = np.array([0.2, 0.3, 0.5])
    assert tv_distance(mu, mu) == 0.0
    assert tv_distance([1, 0, 0], [0, 0.5, 0.5]) == 1.0
    assert tv_distance([0.5, 0.5, 0], [0.25, 0.25, 0.5]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.5], [1.0])
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.6], [0.5, 0.5])


def test_profile_starts_at_point_mass_distance(bc20, profile20):
    d0 = max(tv_distance(np.eye(bc20.size)[j], bc20.pi) for j in range(bc20.size))
    assert profile20.d[0] == pytest.approx(d0, abs=1e-15)


def test_profile_properties(bc20, profile20):
    p = profile20
    assert np.all(np.diff(p.d) <= 1e-12)
    assert np.all(p.d <= p.dbar + 1e-9) and np.all(p.dbar <= 2 * p.d + 1e-9)
    for e, t in p.t_mix.items():
        assert p.d[t] <= e and (t == 0 or p.d[t - 1] > e)
    assert p.t_mix[0.1] >= p.t_mix[0.25] >= p.t_mix[0.5]
    assert p.t_mix_quarter == t_mix_exact(bc20, 0.25)[0]
    # dbar is submultiplicative
    for s, t in [(10, 20), (25, 40), (60, 60), (5, 100)]:
        if s + t < len(p.dbar):
            assert p.dbar[s + t] <= p.dbar[s] * p.dbar[t] + 1e-9


def test_two_state_uniform_chain_mixes_in_one_step():
    ch = lumped_chain_build(ModelSpec.cwp(2, 0.0), 1)
    prof = mixing_profile(ch, eps_list=(0.25,))
    assert prof.d[1] == 0.0 and prof.t_mix[0.25] == 1


def test_censored_profile():
    ch = lumped_chain_build(ModelSpec.blume_capel(1.1 * eq.k1(2.0), 2.0), 30)
    with pytest.warns(RuntimeWarning):
        prof = mixing_profile(ch, t_max=50, dbar_every=10)
    assert prof.censored and prof.t_mix[0.25] is None


def test_profile_export(tmp_path, profile20):
    profile20.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,d,dbar" and len(lines) == len(profile20.t) + 1
    json.dumps(profile20.summary())


def test_t_mix_paths_agree(bc20):
    # stepping and dense squaring give the same answer
    from mfglauber.mixing_lab import _t_mix_squaring
    for eps in (0.05, 0.25, 0.6):
        t_step, _ = t_mix_exact(bc20, eps)
        assert _t_mix_squaring(bc20, eps, list(range(bc20.size))) == t_step


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_two_state_gap(p):
    ch = toy_chain([[1 - p, p], [p, 1 - p]], [0.5, 0.5])
    assert spectral_gap(ch) == pytest.approx(2 * p, abs=1e-14)
    assert relaxation_time(ch) == pytest.approx(1 / (2 * p), rel=1e-14)


def test_nonreversible_chain_is_rejected():
    P = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
    ch = toy_chain(P, [1 / 3] * 3)
    with pytest.raises(ValueError):
        spectral_gap(ch)


@pytest.mark.parametrize("m,n", [(ModelSpec.blume_capel(1.0, 1.0), 25), (ModelSpec.cwp(3, 2.0), 20),
                                 (ModelSpec.gcwp(4, 3, 3.0), 10)])
def test_gap_in_unit_interval_and_spectral_sandwich(m, n):
    ch = lumped_chain_build(m, n)
    gap = spectral_gap(ch)
    assert 0 < gap <= 1
    eps = 0.25
    t, _ = t_mix_exact(ch, eps)
    lo, hi = spectral_bounds(1 / gap, eps, ch.pi.min())
    assert lo - 1e-9 <= t <= hi + 1e-9


def test_sparse_eigensolver_matches_dense(monkeypatch):
    import mfglauber.mixing_lab as ml
    ch = lumped_chain_build(ModelSpec.blume_capel(0.9, 1.0), 30)
    dense = spectral_gap(ch)
    monkeypatch.setattr(ml, "DENSE_EIG_LIMIT", 10)
    assert spectral_gap(ch) == pytest.approx(dense, rel=1e-8)


def test_bottleneck_slow_regime_decays_exponentially(k1_2):
    m = ModelSpec.blume_capel(1.1 * k1_2, 2.0)
    ns = np.array([20, 30, 40, 50, 60])
    phi = np.array([bottleneck_scan(lumped_chain_build(m, int(n))).conductance for n in ns])
    slope, _ = np.polyfit(ns, np.log(phi), 1)
    assert slope < 0
    assert np.all(np.diff(np.log(phi)) < 0)


def test_bottleneck_beta_zero():
    m = ModelSpec.blume_capel(1.0, 0.0)
    ns = [10, 20, 40, 80]
    phi = np.array([bottleneck_scan(lumped_chain_build(m, n)).conductance for n in ns])
    scaled = phi * np.sqrt(ns)
    # no exponential decay: sqrt(n) * conductance stays within constant bounds
    assert scaled.min() > 0.1 and scaled.max() / scaled.min() < 1.5


def test_bottleneck_matches_direct_cut(bc20):
    res = bottleneck_scan(bc20)
    mag = bc20.magnetization()
    mask = mag <= res.threshold if res.side == "below" else mag >= res.threshold
    assert conductance(bc20, mask) == pytest.approx(res.conductance, rel=1e-12)
    for j in range(0, bc20.size, 17):
        single = np.zeros(bc20.size, bool)
        single[j] = True
        assert conductance(bc20, single) <= 1


def test_fit_growth():
    n = np.array([20, 40, 80, 160])
    nlogn = 2.0 * n * np.log(n)
    assert fit_growth(n, nlogn)["classification"] == "n log n"
    assert fit_growth(n, 5 * np.exp(0.1 * n))["classification"] == "exponential"
    assert fit_growth([10, 20], [30, 90])["classification"] == "undetermined"


def test_scaling_sweeps(bc_rapid_K, k1_2, beta_s_32):
    rapid = scaling_sweep(ModelSpec.blume_capel(bc_rapid_K, 1.0), [10, 20, 30, 40])
    assert rapid.classification == "n log n"
    assert 0.9 <= rapid.loglog_exponent <= 1.5
    slow = scaling_sweep(ModelSpec.blume_capel(1.1 * k1_2, 2.0), [15, 20, 25, 30])
    assert slow.classification == "exponential" and slow.exp_c > 0
    potts = scaling_sweep(ModelSpec.cwp(3, 0.9 * beta_s_32), [10, 20, 30, 40])
    assert potts.classification == "n log n"
    json.dumps(potts.summary())


def test_lumped_distance_below_full_chain_distance():
    m = ModelSpec.blume_capel(1.0, 1.0)
    n = 8
    ch = lumped_chain_build(m, n)
    configs, P, pi = full_chain_build(m, n)
    idx = np.array([ch.index(counts_of(c, 3)) for c in configs])
    reps = np.array([int(np.flatnonzero(idx == j)[0]) for j in range(ch.size)])
    F = np.zeros((len(configs), len(reps)))
    F[reps, np.arange(len(reps))] = 1
    L = np.eye(ch.size)
    PT, LT = P.T.tocsr(), ch.P.T.tocsr()
    for t in range(60):
        full_d = 0.5 * np.abs(F - pi[:, None]).sum(axis=0).max()
        lump_d = 0.5 * np.abs(L - ch.pi[:, None]).sum(axis=0).max()
        assert lump_d <= full_d + 1e-12
        F, L = PT @ F, LT @ L

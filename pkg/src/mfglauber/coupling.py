"""Couplings of Glauber dynamics, coupling times and path-coupling bounds."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from mfglauber.equilibrium import BETA_C_BC, k1, kc2, OutOfRegimeWarning
from mfglauber.glauber import (
    LumpedChain,
    as_rng,
    bc_update_probs,
    update_probs_from_counts,
)
from mfglauber.model_core import BC_SPINS, ModelSpec, clgf_bc, counts_of

# ---------------------------------------------------------------------------
# metrics and coupled states


def path_metric(m: ModelSpec, x, y) -> int:
    """sum |x_j - y_j| over spin values for Blume-Capel, Hamming distance otherwise."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ValueError("configurations must have the same length")
    if m.family == "bc":
        return int(np.abs(BC_SPINS[x] - BC_SPINS[y]).sum())
    return int((x != y).sum())


def metric_diameter(m: ModelSpec, n: int) -> int:
    return 2 * n if m.family == "bc" else n


@dataclass
class CoupledState:
    x: np.ndarray
    y: np.ndarray
    dist: int


# ---------------------------------------------------------------------------
# one-step joint laws


def greedy_joint_table(p, q) -> np.ndarray:
    """Joint law keeping the overlap min(p, q) on the diagonal.

    Off the diagonal the leftover masses are paired independently,
    ``(p_l - P_l)(q_m - P_m)/(1 - P)``.  When the laws coincide the table is
    diagonal.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    low = np.minimum(p, q)
    P = low.sum()
    table = np.diag(low)
    if 1 - P > 1e-15:
        table = table + np.outer(p - low, q - low) / (1 - P)
    return table


def shared_uniform_table(p, q) -> np.ndarray:
    """Joint law from one uniform U fed through both inverse CDFs."""
    cp = np.concatenate([[0.0], np.cumsum(p)])
    cq = np.concatenate([[0.0], np.cumsum(q)])
    cp[-1] = cq[-1] = 1.0
    lo = np.maximum(cp[:-1, None], cq[None, :-1])
    hi = np.minimum(cp[1:, None], cq[None, 1:])
    return np.clip(hi - lo, 0.0, None)


def miscouple_probability(table) -> float:
    table = np.asarray(table)
    return float(1.0 - np.trace(table))


def coupling_kernel(m: ModelSpec, sigma, tau, kind: str = "auto"):
    """Exact one-step coupled law as a list of ``(prob, x_next, y_next)``.

    ``kind`` is ``"greedy"``, ``"shared"`` or ``"auto"`` (shared uniform for
    Blume-Capel, greedy otherwise).  The same vertex is updated in both chains.
    """
    sigma, tau = np.asarray(sigma), np.asarray(tau)
    n = len(sigma)
    kind = _resolve_kind(m, kind)
    cs, ct = counts_of(sigma, m.q), counts_of(tau, m.q)
    out = []
    for i in range(n):
        p = update_probs_from_counts(m, cs, int(sigma[i]))
        q = update_probs_from_counts(m, ct, int(tau[i]))
        table = greedy_joint_table(p, q) if kind == "greedy" else shared_uniform_table(p, q)
        for a in range(m.q):
            for b in range(m.q):
                if table[a, b] > 0:
                    x = sigma.copy()
                    y = tau.copy()
                    x[i], y[i] = a, b
                    out.append((table[a, b] / n, x, y))
    return out


def _resolve_kind(m, kind):
    if kind == "auto":
        return "shared" if m.family == "bc" else "greedy"
    if kind not in ("greedy", "shared"):
        raise ValueError(f"unknown coupling {kind!r}")
    return kind


def _sample_table(table, u) -> tuple[int, int]:
    flat = np.cumsum(table.ravel())
    k = min(int(np.searchsorted(flat, u * flat[-1], side="right")), table.size - 1)
    return divmod(k, table.shape[1])


def greedy_coupling_step(m: ModelSpec, sigma, tau, seed) -> CoupledState:
    rng = as_rng(seed)
    sigma, tau = np.array(sigma), np.array(tau)
    if len(sigma) != len(tau):
        raise ValueError("configurations must have the same length")
    i = int(rng.integers(len(sigma)))
    p = update_probs_from_counts(m, counts_of(sigma, m.q), int(sigma[i]))
    q = update_probs_from_counts(m, counts_of(tau, m.q), int(tau[i]))
    a, b = _sample_table(greedy_joint_table(p, q), rng.random())
    sigma[i], tau[i] = a, b
    return CoupledState(sigma, tau, path_metric(m, sigma, tau))


def bc_coupling_step(beta: float, K: float, sigma, tau, seed) -> CoupledState:
    """Shared-uniform coupling with thresholds laid out as (-1, 0, +1)."""
    rng = as_rng(seed)
    sigma, tau = np.array(sigma), np.array(tau)
    n = len(sigma)
    if len(tau) != n:
        raise ValueError("configurations must have the same length")
    i = int(rng.integers(n))
    s_sig = int(BC_SPINS[sigma].sum() - BC_SPINS[sigma[i]])
    s_tau = int(BC_SPINS[tau].sum() - BC_SPINS[tau[i]])
    u = rng.random()
    cp = np.cumsum(bc_update_probs(beta, K, n, s_sig))
    cq = np.cumsum(bc_update_probs(beta, K, n, s_tau))
    sigma[i] = min(int(np.searchsorted(cp, u, side="right")), 2)
    tau[i] = min(int(np.searchsorted(cq, u, side="right")), 2)
    m = ModelSpec.blume_capel(K, beta)
    return CoupledState(sigma, tau, path_metric(m, sigma, tau))


# ---------------------------------------------------------------------------
# Blume-Capel mean coupling distance


def bc_phi(beta: float, K: float, n: int, x):
    """2 sinh(a x) / (2 cosh(a x) + e^{beta - beta K / n}) with a = 2 beta K / n."""
    a = 2 * beta * K / n
    x = np.asarray(x, dtype=float)
    # divide through by e^{|a x|} to stay finite
    ax = np.abs(a * x)
    e = np.exp(-2 * ax)
    out = np.sign(x) * (1 - e) / (1 + e + np.exp(beta - beta * K / n - ax))
    return out if np.ndim(out) else float(out)


@dataclass
class MeanDistance:
    phi_form: float
    cprime_form: float


def mean_coupling_distance_bc(beta: float, K: float, n: int, S_sigma: int, S_tau: int) -> MeanDistance:
    """Leading-order one-step mean distance for neighbours with S_tau = S_sigma + 1."""
    if S_tau != S_sigma + 1:
        raise ValueError("neighbouring configurations need S_tau = S_sigma + 1")
    if abs(S_sigma) > n or abs(S_tau) > n:
        raise ValueError("total spin out of range")
    lead = (n - 1) / n
    phi = lead + lead * (bc_phi(beta, K, n, S_tau) - bc_phi(beta, K, n, S_sigma))
    a = 2 * beta * K / n
    cp = lead + lead * (clgf_bc(beta, a * S_tau, 1) - clgf_bc(beta, a * S_sigma, 1))
    return MeanDistance(float(phi), float(cp))


def mean_coupling_distance_bc_exact(beta: float, K: float, sigma, tau) -> float:
    """Exact expected distance after one shared-uniform step from a neighbour pair.

    ``tau`` must exceed ``sigma`` by one unit of spin at a single vertex.
    """
    sigma, tau = np.asarray(sigma), np.asarray(tau)
    diff = np.flatnonzero(sigma != tau)
    ss, st = BC_SPINS[sigma], BC_SPINS[tau]
    if len(diff) != 1 or st[diff[0]] - ss[diff[0]] != 1:
        raise ValueError("tau must exceed sigma by one unit at one vertex")
    n = len(sigma)
    i = diff[0]
    others = np.delete(ss, i)
    S_s, S_t = ss.sum(), st.sum()
    gap = bc_phi(beta, K, n, S_t - others) - bc_phi(beta, K, n, S_s - others)
    return float((n - 1) / n + np.sum(gap) / n)


def bc_contraction_scan(beta: float, K: float, n_list) -> tuple[float, int, int]:
    """Largest phi-form mean distance over all neighbour magnetizations and sizes.

    Returns ``(value, n, S_sigma)`` at the maximum.
    """
    best = (-np.inf, 0, 0)
    for n in n_list:
        S = np.arange(-n, n)
        vals = np.array([mean_coupling_distance_bc(beta, K, n, int(s), int(s) + 1).phi_form
                         for s in S])
        j = int(np.argmax(vals))
        if vals[j] > best[0]:
            best = (float(vals[j]), int(n), int(S[j]))
    return best


# ---------------------------------------------------------------------------
# Monte Carlo coupling times


@dataclass
class CouplingTimes:
    tau: np.ndarray
    censored: np.ndarray
    max_steps: int

    def survival(self, t) -> np.ndarray:
        """P(tau_c > t); censored replicas count as not yet coupled."""
        t = np.atleast_1d(np.asarray(t))
        return (self.tau[None, :] > t[:, None]).mean(axis=1)

    def quantiles(self, qs=(0.1, 0.5, 0.9)) -> dict:
        return {str(q): float(np.quantile(self.tau, q)) for q in qs}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "tau_c", "censored"])
            for r, (t, c) in enumerate(zip(self.tau, self.censored)):
                w.writerow([r, int(t), int(c)])


def coupling_time_mc(m: ModelSpec, sigma0, tau0, seed, max_steps: int = 100_000,
                     replicas: int = 100, kind: str = "auto",
                     y_sampler=None) -> CouplingTimes:
    """Coupling times of ``replicas`` independent coupled pairs.

    ``y_sampler(rng, replicas)`` can replace the fixed second start by random
    configurations (for instance draws from equilibrium).
    """
    rng = as_rng(seed)
    kind = _resolve_kind(m, kind)
    x0 = np.asarray(sigma0, dtype=np.int64)
    n = len(x0)
    X = np.tile(x0, (replicas, 1))
    if y_sampler is None:
        Y = np.tile(np.asarray(tau0, dtype=np.int64), (replicas, 1))
    else:
        Y = np.asarray(y_sampler(rng, replicas), dtype=np.int64)
    q = m.q
    cx = np.stack([(X == k).sum(axis=1) for k in range(q)], axis=1)
    cy = np.stack([(Y == k).sum(axis=1) for k in range(q)], axis=1)
    tau = np.full(replicas, max_steps, dtype=np.int64)
    active = np.any(X != Y, axis=1)
    tau[~active] = 0
    rows = np.arange(replicas)
    for t in range(1, max_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        i = rng.integers(0, n, size=idx.size)
        u = rng.random(idx.size)
        a_old, b_old = X[idx, i], Y[idx, i]
        p = update_probs_from_counts(m, cx[idx], a_old)
        pq = update_probs_from_counts(m, cy[idx], b_old)
        if kind == "shared":
            a_new = (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
            b_new = (u[:, None] > np.cumsum(pq, axis=1)[:, :-1]).sum(axis=1)
        else:
            low = np.minimum(p, pq)
            P = low.sum(axis=1)
            rest = np.clip(1 - P, 1e-300, None)
            tables = (low[:, :, None] * np.eye(q)[None]
                      + (p - low)[:, :, None] * (pq - low)[:, None, :] / rest[:, None, None])
            flat = np.cumsum(tables.reshape(idx.size, -1), axis=1)
            k = (u[:, None] * flat[:, -1:] > flat).sum(axis=1)
            k = np.minimum(k, q * q - 1)
            a_new, b_new = np.divmod(k, q)
        np.subtract.at(cx, (idx, a_old), 1)
        np.add.at(cx, (idx, a_new), 1)
        np.subtract.at(cy, (idx, b_old), 1)
        np.add.at(cy, (idx, b_new), 1)
        X[idx, i] = a_new
        Y[idx, i] = b_new
        # the counts must agree before whole configurations can
        cand = idx[np.all(cx[idx] == cy[idx], axis=1)]
        if cand.size:
            met = cand[np.all(X[cand] == Y[cand], axis=1)]
            tau[met] = t
            active[met] = False
    censored = active.copy()
    if censored.all():
        warnings.warn("every replica hit max_steps without coupling", RuntimeWarning, stacklevel=2)
    return CouplingTimes(tau, censored, max_steps)


def equilibrium_sampler(chain: LumpedChain):
    """Draws configurations from the stationary law of a lumped chain."""
    def draw(rng, size):
        idx = rng.choice(chain.size, size=size, p=chain.pi)
        out = np.empty((size, chain.n), dtype=np.int64)
        for r, j in enumerate(idx):
            spins = np.repeat(np.arange(chain.model.q), chain.states[j])
            out[r] = rng.permutation(spins)
        return out
    return draw


# ---------------------------------------------------------------------------
# bound calculators


def classical_pc_bound(delta: float, diam: int, eps: float) -> int:
    """ceil((log diam - log eps) / delta)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if diam < 1:
        raise ValueError("diam must be >= 1")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    return max(0, math.ceil((math.log(diam) - math.log(eps)) / delta - 1e-12))


def ising_torus_bound(d: int, beta: float, n: int, eps: float) -> int:
    """Path-coupling bound for heat-bath Glauber dynamics of Ising on a d-torus."""
    rate = 1 - 2 * d * math.tanh(beta)
    if rate <= 0:
        raise ValueError("tanh(beta) >= 1/(2d): single-site contraction fails")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return math.ceil(n * (d * math.log(n) - math.log(eps)) / rate)


def bc_rapid_alpha(beta: float, K: float) -> float:
    """Half the supremum of admissible alpha for the Blume-Capel bounds."""
    if beta <= BETA_C_BC:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutOfRegimeWarning)
            Kc = kc2(beta)
    else:
        Kc = k1(beta)
    if K >= Kc:
        raise ValueError(f"K = {K} is outside the rapid-mixing region (critical {Kc})")
    return 0.5 * (Kc - K) / Kc


def bc_rapid_bound(beta: float, K: float, n: int, eps: float = 0.25) -> int:
    """ceil((n/alpha)(log n + log(c/eps))), c = 1 below log 4 and 2 above."""
    alpha = bc_rapid_alpha(beta, K)
    c = 1.0 if beta <= BETA_C_BC else 2.0
    return math.ceil(n / alpha * (math.log(n) + math.log(c / eps)))

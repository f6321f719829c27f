"""Single-site Glauber dynamics: update laws, simulation and the lumped chain.

A step picks a vertex uniformly and redraws its spin from the heat-bath law
``P(sigma -> sigma_{i,k}) ∝ exp(-beta n H(L_n(sigma_{i,k})))``.  The law
depends on the configuration only through its counts and the current spin
at ``i``, so the chain projects exactly onto counts vectors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, logsumexp

from mfglauber.equilibrium import simplex_grid
from mfglauber.model_core import (
    BC_SPINS,
    ModelSpec,
    check_simplex,
    counts_of,
    grad_H,
    q_operator,
    softmax,
)

DEFAULT_STATE_CAP = 20_000


class StateSpaceTooLarge(ValueError):
    pass


def as_rng(seed) -> np.random.Generator:
    """Accept an integer seed or an existing Generator; refuse ``None``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# update laws


def _energy_counts(m: ModelSpec, counts, n: int) -> np.ndarray:
    """-beta n H(counts / n), vectorised over leading axes.

    Computed without the simplex check so callers can pass count rows with
    masked (invalid) entries that get discarded afterwards.
    """
    z = np.asarray(counts, dtype=float) / n
    if m.family == "bc":
        H = z[..., 0] + z[..., 2] - m.K * (z[..., 2] - z[..., 0]) ** 2
    else:
        H = -np.sum(np.abs(z) ** m.r, axis=-1) / m.r
    return -m.beta * n * H


def update_probs_from_counts(m: ModelSpec, counts, label) -> np.ndarray:
    """Heat-bath law for a vertex currently holding ``label`` given total counts.

    ``counts`` has shape ``(..., q)`` and ``label`` broadcasts against the
    leading axes.  Returns shape ``(..., q)``.
    """
    counts = np.asarray(counts)
    n = int(np.sum(counts, axis=-1).flat[0])
    q = m.q
    label = np.asarray(label)
    base = counts - np.eye(q, dtype=counts.dtype)[label]
    cand = base[..., None, :] + np.eye(q, dtype=counts.dtype)
    return softmax(_energy_counts(m, cand, n))


def bc_update_probs(beta: float, K: float, n: int, S_tilde) -> np.ndarray:
    """(p_{-1}, p_0, p_{+1}) for a vertex whose neighbours have total spin S_tilde."""
    S_tilde = np.asarray(S_tilde)
    if np.any(np.abs(S_tilde) > n - 1):
        raise ValueError(f"|S_tilde| must be <= n - 1 = {n - 1}")
    a = 2 * beta * K * S_tilde / n
    logits = np.stack([-a, np.full_like(a, beta - beta * K / n, dtype=float), a], axis=-1)
    return softmax(logits)


def general_update_probs(m: ModelSpec, sigma, i: int) -> np.ndarray:
    sigma = np.asarray(sigma)
    if not 0 <= i < len(sigma):
        raise IndexError(f"vertex {i} out of range for n = {len(sigma)}")
    return update_probs_from_counts(m, counts_of(sigma, m.q), int(sigma[i]))


def g_vector(m: ModelSpec, z) -> np.ndarray:
    """g(z) = softmax(-beta grad H(z)), the limiting update law at proportions z."""
    return softmax(-m.beta * grad_H(m, z))


def gamma_hessian(s) -> np.ndarray:
    """Hessian of Gamma at a point whose softmax is ``s``: diag(s) - s s^T."""
    s = np.asarray(s, dtype=float)
    return s[..., :, None] * np.eye(s.shape[-1]) - s[..., :, None] * s[..., None, :]


def expansion_phi(m: ModelSpec, z, label: int) -> np.ndarray:
    """First-order correction phi_{k,label}(z) of the update law, k = 0..q-1."""
    if not m.separable:
        raise ValueError("the expansion is implemented for separable H only")
    z = check_simplex(z, m.q)
    Qh = q_operator(m, z)
    Hs = gamma_hessian(g_vector(m, z))
    return -0.5 * Hs @ Qh + Qh[label] * Hs[:, label]


def update_expansion(m: ModelSpec, z, label: int, n: int) -> np.ndarray:
    """g(z) + (beta/n) phi_{., label}(z)."""
    return g_vector(m, z) + (m.beta / n) * expansion_phi(m, z, label)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class Trajectory:
    steps: np.ndarray
    counts: np.ndarray
    final: np.ndarray

    def to_csv(self, path) -> None:
        q = self.counts.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"count_{k + 1}" for k in range(q)])
            for s, c in zip(self.steps, self.counts):
                w.writerow([int(s)] + [int(x) for x in c])


class _LawCache:
    """Cumulative update laws keyed by (counts, label); counts revisit often."""

    def __init__(self, m: ModelSpec):
        self.m = m
        self.table = {}

    def cdf(self, counts: tuple, label: int):
        key = (counts, label)
        hit = self.table.get(key)
        if hit is None:
            p = update_probs_from_counts(self.m, np.array(counts), label)
            hit = np.cumsum(p)
            hit[-1] = 1.0
            self.table[key] = hit
        return hit


def simulate_chain(m: ModelSpec, n: int, initial, steps: int, seed,
                   stride: int = 1) -> Trajectory:
    """Run ``steps`` Glauber updates from ``initial``; record counts every ``stride``."""
    rng = as_rng(seed)
    spins = np.array(initial, dtype=np.int64)
    if len(spins) != n:
        raise ValueError("initial configuration has the wrong length")
    counts = list(counts_of(spins, m.q))
    cache = _LawCache(m)
    verts = rng.integers(0, n, size=steps)
    us = rng.random(steps)
    rec_steps = [0]
    rec = [tuple(counts)]
    for t in range(steps):
        i = verts[t]
        old = spins[i]
        c = cache.cdf(tuple(counts), int(old))
        new = int(np.searchsorted(c, us[t], side="right"))
        if new != old:
            counts[old] -= 1
            counts[new] += 1
            spins[i] = new
        if (t + 1) % stride == 0:
            rec_steps.append(t + 1)
            rec.append(tuple(counts))
    return Trajectory(np.array(rec_steps), np.array(rec, dtype=np.int64), spins)


def simulate_replicas(m: ModelSpec, initial, steps: int, replicas: int, seed) -> np.ndarray:
    """Counts after ``steps`` updates for independent replicas, shape (replicas, q)."""
    rng = as_rng(seed)
    init = np.asarray(initial, dtype=np.int64)
    n = len(init)
    spins = np.tile(init, (replicas, 1))
    counts = np.tile(counts_of(init, m.q), (replicas, 1))
    rows = np.arange(replicas)
    for _ in range(steps):
        i = rng.integers(0, n, size=replicas)
        old = spins[rows, i]
        p = update_probs_from_counts(m, counts, old)
        new = (rng.random(replicas)[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
        np.subtract.at(counts, (rows, old), 1)
        np.add.at(counts, (rows, new), 1)
        spins[rows, i] = new
    return counts


# ---------------------------------------------------------------------------
# lumped chain


def n_count_states(n: int, q: int) -> int:
    return math.comb(n + q - 1, q - 1)


def log_gibbs_weights(m: ModelSpec, states: np.ndarray, n: int) -> np.ndarray:
    """log of multinomial(n; c) exp(-beta n H(c/n)), unnormalised."""
    log_multi = gammaln(n + 1) - gammaln(states + 1).sum(axis=1)
    return log_multi + _energy_counts(m, states, n)


@dataclass
class LumpedChain:
    model: ModelSpec
    n: int
    states: np.ndarray
    P: sp.csr_matrix
    pi: np.ndarray
    log_pi: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, counts) -> int:
        return self._index[tuple(int(c) for c in counts)]

    def magnetization(self) -> np.ndarray:
        """BC: S_n = n_{+1} - n_{-1}; other families: n_1 - n/q."""
        if self.model.family == "bc":
            return self.states[:, 2] - self.states[:, 0]
        return self.states[:, 0] - self.n / self.model.q

    def corner_states(self) -> list:
        """Indices of the states with every spin equal (all corners of the simplex)."""
        q = self.model.q
        return [self.index(self.n * np.eye(q, dtype=int)[k]) for k in range(q)]

    def dense(self) -> np.ndarray:
        return self.P.toarray()

    def reversibility_residual(self) -> float:
        flow = sp.diags(self.pi) @ self.P
        return float(abs(flow - flow.T).max()) if flow.nnz else 0.0

    def stationarity_residual(self) -> float:
        return float(np.abs(self.P.T @ self.pi - self.pi).max())


def lumped_chain_build(m: ModelSpec, n: int, cap: int = DEFAULT_STATE_CAP) -> LumpedChain:
    q = m.q
    N = n_count_states(n, q)
    if N > cap:
        raise StateSpaceTooLarge(f"{N} counts states exceed the cap of {cap}")
    states = simplex_grid(q, n)
    index = {tuple(s): j for j, s in enumerate(states.tolist())}
    eye = np.eye(q, dtype=np.int64)
    rows, cols, vals = [], [], []
    src = np.arange(N)
    for a in range(q):
        occupied = states[:, a] > 0
        if not occupied.any():
            continue
        s_a = states[occupied]
        p = update_probs_from_counts(m, s_a, np.full(len(s_a), a))
        w = s_a[:, a] / n
        for k in range(q):
            dest = s_a - eye[a] + eye[k]
            rows.append(src[occupied])
            cols.append(np.array([index[tuple(d)] for d in dest.tolist()]))
            vals.append(w * p[:, k])
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    P.sum_duplicates()
    lw = log_gibbs_weights(m, states, n)
    log_pi = lw - logsumexp(lw)
    return LumpedChain(m, n, states, P, np.exp(log_pi), log_pi, index)


def full_chain_build(m: ModelSpec, n: int, cap: int = 20_000):
    """Transition matrix on all q^n configurations (small n sanity checks).

    Returns ``(configs, P, pi)`` with configurations in base-q order.
    """
    q = m.q
    N = q**n
    if N > cap:
        raise StateSpaceTooLarge(f"{N} configurations exceed the cap of {cap}")
    codes = np.arange(N)
    configs = (codes[:, None] // q ** np.arange(n)[::-1]) % q
    counts = np.stack([(configs == k).sum(axis=1) for k in range(q)], axis=1)
    rows, cols, vals = [], [], []
    place = q ** np.arange(n)[::-1]
    for i in range(n):
        old = configs[:, i]
        p = update_probs_from_counts(m, counts, old)
        for k in range(q):
            dest = codes + (k - old) * place[i]
            rows.append(codes)
            cols.append(dest)
            vals.append(p[:, k] / n)
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    lw = _energy_counts(m, counts, n)
    pi = np.exp(lw - logsumexp(lw))
    return configs, P, pi


def project_to_counts(chain: LumpedChain, configs: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Push a law on configurations forward to the lumped state space."""
    q = chain.model.q
    idx = np.array([chain.index(counts_of(c, q)) for c in configs])
    return np.bincount(idx, weights=mu, minlength=chain.size)


def bc_spins(labels) -> np.ndarray:
    return BC_SPINS[np.asarray(labels)]

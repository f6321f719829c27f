"""Exact mixing quantities on lumped chains.

``d(t)`` is the worst total-variation distance to stationarity over starting
states, ``dbar(t)`` the worst distance between two chains started at
different states.  Both are computed by propagating start distributions
through the sparse kernel.  Slow chains switch to repeated squaring of the
dense kernel once the step-by-step budget runs out.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigvalsh
from scipy.sparse.linalg import eigsh
from scipy.spatial.distance import cdist

from mfglauber.glauber import LumpedChain, lumped_chain_build, StateSpaceTooLarge

FULL_START_LIMIT = 5000
DBAR_FULL_LIMIT = 600
DENSE_EIG_LIMIT = 5000
DENSE_POWER_LIMIT = 4000
SMALL_CHAIN = 300


def tv_distance(mu, nu, tol: float = 1e-9) -> float:
    """Total-variation distance (half the L1 distance) of two laws."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {nu.shape}")
    for v in (mu, nu):
        if abs(v.sum() - 1) > tol or np.any(v < -tol):
            raise ValueError("inputs must be probability vectors")
    return 0.5 * float(np.abs(mu - nu).sum())


@dataclass
class MixingProfile:
    n: int
    label: str
    t: np.ndarray
    d: np.ndarray
    dbar: np.ndarray
    t_mix: dict
    spectral_gap: Optional[float] = None
    relaxation_time: Optional[float] = None
    censored: bool = False
    approximate: bool = False
    dbar_approximate: bool = False
    starts: list = field(default_factory=list)

    @property
    def t_mix_quarter(self) -> Optional[int]:
        return self.t_mix.get(0.25)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "d", "dbar"])
            for t, d, db in zip(self.t, self.d, self.dbar):
                w.writerow([int(t), repr(float(d)), "" if np.isnan(db) else repr(float(db))])

    def summary(self) -> dict:
        return {
            "n": self.n,
            "model": self.label,
            "t_mix": {str(k): v for k, v in sorted(self.t_mix.items())},
            "spectral_gap": self.spectral_gap,
            "relaxation_time": self.relaxation_time,
            "censored": self.censored,
            "approximate_starts": self.approximate,
        }


def default_starts(chain: LumpedChain, n_extra: int = 40) -> tuple[list, bool]:
    """All states for small chains; corners plus an even sample otherwise."""
    if chain.size <= FULL_START_LIMIT:
        return list(range(chain.size)), False
    corners = chain.corner_states()
    mag = chain.magnetization()
    order = np.argsort(mag, kind="stable")
    picks = order[np.linspace(0, chain.size - 1, n_extra).astype(int)]
    return sorted(set(corners) | set(int(p) for p in picks)), True


def _start_block(chain: LumpedChain, starts) -> np.ndarray:
    M = np.zeros((chain.size, len(starts)))
    M[starts, np.arange(len(starts))] = 1.0
    return M


def _tv_cols(M, pi):
    return 0.5 * np.abs(M - pi[:, None]).sum(axis=0)


def mixing_profile(chain: LumpedChain, t_max: int = 100_000,
                   eps_list: Sequence[float] = (0.25,), starts=None,
                   dbar_every: int = 1, dbar_starts: Optional[int] = None) -> MixingProfile:
    """Exact d(t) and dbar(t) by propagating point masses through the kernel.

    Iteration stops once d(t) < min(eps_list)/10 or at ``t_max`` (censored).
    ``dbar`` is evaluated every ``dbar_every`` steps (NaN elsewhere) over all
    start pairs when the chain is small and over a subset otherwise.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    eps_list = sorted(float(e) for e in eps_list)
    approximate = False
    if starts is None:
        starts, approximate = default_starts(chain)
    starts = list(starts)
    if dbar_starts is None:
        dbar_starts = DBAR_FULL_LIMIT
    pair_cols = np.arange(len(starts))
    dbar_approx = approximate
    if len(starts) > dbar_starts:
        dbar_approx = True
        pair_cols = np.unique(np.linspace(0, len(starts) - 1, dbar_starts).astype(int))

    PT = chain.P.T.tocsr()
    M = _start_block(chain, starts)
    pi = chain.pi
    ts, ds, dbs = [], [], []
    stop = eps_list[0] / 10
    t = 0
    while True:
        d_t = float(_tv_cols(M, pi).max())
        if t % dbar_every == 0:
            sub = M[:, pair_cols].T
            db_t = 0.5 * float(cdist(sub, sub, "cityblock").max()) if len(pair_cols) > 1 else 0.0
        else:
            db_t = np.nan
        ts.append(t)
        ds.append(d_t)
        dbs.append(db_t)
        if d_t < stop or t >= t_max:
            break
        M = PT @ M
        t += 1
    d = np.array(ds)
    t_mix = {}
    for e in eps_list:
        hit = np.flatnonzero(d <= e)
        t_mix[e] = int(hit[0]) if hit.size else None
    censored = any(v is None for v in t_mix.values())
    if censored:
        warnings.warn(f"mixing profile censored at t_max = {t_max}", RuntimeWarning, stacklevel=2)
    return MixingProfile(chain.n, chain.model.label(), np.array(ts), d, np.array(dbs),
                         t_mix, censored=censored, approximate=approximate,
                         dbar_approximate=dbar_approx, starts=starts)


def _worst_tv(rows: np.ndarray, pi: np.ndarray) -> float:
    return float(0.5 * np.abs(rows - pi[None, :]).sum(axis=1).max())


def t_mix_exact(chain: LumpedChain, eps: float = 0.25, starts=None,
                step_budget: int = 20_000) -> tuple[int, bool]:
    """t_mix(eps), choosing between step-by-step propagation and squaring.

    With every state as a start and a chain that fits in memory, the dense
    kernel is squared until the threshold is crossed and the exact crossing
    time is found by binary search over the stored powers.  Otherwise start
    distributions are propagated one step at a time, falling back to
    squaring when ``step_budget`` runs out.  Returns ``(t_mix, approximate)``,
    where ``approximate`` means the starts were a sample of the state space.
    """
    approximate = False
    if starts is None:
        starts, approximate = default_starts(chain)
    starts = list(starts)
    full = len(starts) == chain.size
    pi = chain.pi
    if not (full and SMALL_CHAIN < chain.size <= DENSE_POWER_LIMIT):
        PT = chain.P.T.tocsr()
        M = _start_block(chain, starts)
        for t in range(step_budget + 1):
            if _tv_cols(M, pi).max() <= eps:
                return t, approximate
            M = PT @ M
        if chain.size > DENSE_POWER_LIMIT:
            raise StateSpaceTooLarge("chain too large for dense repeated squaring")
    return _t_mix_squaring(chain, eps, starts), approximate


def _t_mix_squaring(chain: LumpedChain, eps: float, starts) -> int:
    pi = chain.pi
    full = len(starts) == chain.size and list(starts) == list(range(chain.size))
    if full:
        rows = None  # the identity, kept implicit
    else:
        rows = np.zeros((len(starts), chain.size))
        rows[np.arange(len(starts)), starts] = 1.0
    apply = lambda R, A: A if R is None else R @ A
    if _worst_tv(np.eye(chain.size)[starts] if rows is None else rows, pi) <= eps:
        return 0
    powers = [chain.dense()]
    elapsed = 0
    while True:
        nxt = apply(rows, powers[-1])
        if _worst_tv(nxt, pi) <= eps:
            break
        rows = nxt
        elapsed += 2 ** (len(powers) - 1)
        powers.append(powers[-1] @ powers[-1])
        if len(powers) > 60:
            raise RuntimeError("t_mix search diverged")
    # still above eps after `elapsed` steps, below after elapsed + 2^k
    for j in range(len(powers) - 2, -1, -1):
        cand = apply(rows, powers[j])
        if _worst_tv(cand, pi) > eps:
            rows = cand
            elapsed += 2**j
    return elapsed + 1


# ---------------------------------------------------------------------------
# spectral quantities


def symmetrized_kernel(chain: LumpedChain) -> sp.csr_matrix:
    """A_ij = sqrt(P_ij P_ji), similar to P for reversible chains."""
    P = chain.P.tocsr()
    PT = P.T.tocsr()
    A = P.multiply(PT).sqrt()
    return sp.csr_matrix(A)


def spectral_gap(chain: LumpedChain, absolute: bool = True) -> float:
    """1 minus the second-largest eigenvalue modulus of the kernel."""
    res = chain.reversibility_residual()
    if res > 1e-8:
        raise ValueError(f"chain is not reversible (residual {res:.3e})")
    A = symmetrized_kernel(chain)
    if chain.size == 1:
        return 1.0
    if chain.size <= DENSE_EIG_LIMIT:
        ev = eigvalsh(A.toarray())
        lam2, lam_min = ev[-2], ev[0]
    else:
        top = eigsh(A, k=2, which="LA", tol=1e-14, return_eigenvectors=False)
        bot = eigsh(A, k=1, which="SA", tol=1e-14, return_eigenvectors=False)
        lam2, lam_min = np.sort(top)[0], bot[0]
    slem = max(lam2, abs(lam_min)) if absolute else lam2
    return float(1.0 - slem)


def relaxation_time(chain: LumpedChain) -> float:
    return 1.0 / spectral_gap(chain)


def spectral_bounds(t_rel: float, eps: float, pi_min: float) -> tuple[float, float]:
    """Lower and upper bounds on t_mix(eps) from the relaxation time."""
    return (t_rel - 1) * np.log(1 / (2 * eps)), t_rel * np.log(1 / (eps * pi_min))


# ---------------------------------------------------------------------------
# bottlenecks


def conductance(chain: LumpedChain, mask) -> float:
    """Q(S, S^c) / pi(S) for the state set given by a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    piS = chain.pi[mask].sum()
    if piS <= 0:
        raise ValueError("set has zero stationary mass")
    flow = chain.P[mask][:, ~mask]
    return float((chain.pi[mask] @ flow).sum() / piS)


@dataclass
class BottleneckResult:
    conductance: float
    threshold: float
    side: str
    pi_S: float


def bottleneck_scan(chain: LumpedChain) -> BottleneckResult:
    """Smallest conductance over magnetization-threshold cuts with pi(S) <= 1/2."""
    res = chain.reversibility_residual()
    if res > 1e-8:
        raise ValueError(f"chain is not reversible (residual {res:.3e})")
    mag = chain.magnetization().astype(float)
    levels = np.unique(mag)
    P = chain.P.tocoo()
    flow = chain.pi[P.row] * P.data
    mx, my = mag[P.row], mag[P.col]
    best = BottleneckResult(np.inf, np.nan, "", np.nan)
    pi_level = np.array([chain.pi[mag == v].sum() for v in levels])
    for side in ("below", "above"):
        if side == "below":
            piS = np.cumsum(pi_level)
            # edge x->y leaves {mag <= v} iff mx <= v < my
            cross = mx < my
            lo = np.searchsorted(levels, mx[cross])
            hi = np.searchsorted(levels, my[cross])
        else:
            piS = np.cumsum(pi_level[::-1])[::-1]
            cross = mx > my
            lo = np.searchsorted(levels, my[cross]) + 1
            hi = np.searchsorted(levels, mx[cross]) + 1
        diff = np.zeros(len(levels) + 1)
        np.add.at(diff, lo, flow[cross])
        np.add.at(diff, hi, -flow[cross])
        Q = np.cumsum(diff)[:-1]
        ok = (piS <= 0.5 + 1e-15) & (piS > 0)
        if ok.any():
            phi = np.where(ok, Q / np.where(piS > 0, piS, 1), np.inf)
            j = int(np.argmin(phi))
            if phi[j] < best.conductance:
                best = BottleneckResult(float(phi[j]), float(levels[j]), side, float(piS[j]))
    return best


# ---------------------------------------------------------------------------
# scaling sweeps


@dataclass
class SweepResult:
    n: np.ndarray
    t_mix: np.ndarray
    nlogn_a: float
    nlogn_residual: float
    exp_b: float
    exp_c: float
    exp_residual: float
    loglog_exponent: float
    classification: str
    skipped: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n": [int(x) for x in self.n],
            "t_mix": [int(x) for x in self.t_mix],
            "fit_nlogn_a": self.nlogn_a,
            "fit_nlogn_rms": self.nlogn_residual,
            "fit_exp_b": self.exp_b,
            "fit_exp_c": self.exp_c,
            "fit_exp_rms": self.exp_residual,
            "loglog_exponent": self.loglog_exponent,
            "classification": self.classification,
            "skipped": self.skipped,
        }


def fit_growth(n, t) -> dict:
    """Compare a n log n against b e^{c n} on log scale.

    Residuals are root mean squares per degree of freedom (one parameter for
    the n log n model, two for the exponential), so with fewer than three
    sizes the comparison is ``"undetermined"``.
    """
    n = np.asarray(n, dtype=float)
    y = np.log(np.asarray(t, dtype=float))
    base = np.log(n * np.log(n))
    log_a = float(np.mean(y - base))
    r1 = y - base - log_a
    c, log_b = np.polyfit(n, y, 1)
    r2 = y - (log_b + c * n)
    slope = float(np.polyfit(np.log(n), y, 1)[0])
    k = len(n)
    rms1 = float(np.sqrt(np.sum(r1**2) / (k - 1))) if k > 1 else float("nan")
    rms2 = float(np.sqrt(np.sum(r2**2) / (k - 2))) if k > 2 else float("nan")
    if k < 3:
        cls = "undetermined"
    else:
        cls = "n log n" if rms1 <= rms2 else "exponential"
    return {"a": float(np.exp(log_a)), "rms_nlogn": rms1, "b": float(np.exp(log_b)),
            "c": float(c), "rms_exp": rms2, "loglog_exponent": slope, "classification": cls}


def scaling_sweep(model, n_list, eps: float = 0.25, cap: int = 20_000,
                  step_budget: int = 20_000) -> SweepResult:
    ns, ts, skipped = [], [], []
    for n in n_list:
        try:
            chain = lumped_chain_build(model, int(n), cap=cap)
            t, _ = t_mix_exact(chain, eps, step_budget=step_budget)
        except StateSpaceTooLarge as exc:
            warnings.warn(f"n = {n} skipped: {exc}", RuntimeWarning, stacklevel=2)
            skipped.append(int(n))
            continue
        ns.append(int(n))
        ts.append(t)
    if len(ns) < 2:
        raise ValueError("need at least two system sizes to fit growth")
    f = fit_growth(ns, ts)
    return SweepResult(np.array(ns), np.array(ts), f["a"], f["rms_nlogn"], f["b"], f["c"],
                       f["rms_exp"], f["loglog_exponent"], f["classification"], skipped)


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)

"""Free energies, rate functions, equilibrium macrostates and critical values.

Blume-Capel quantities are functions of the scalar magnetization ``z`` in
``[-1, 1]``.  The Potts-type families work on the probability simplex.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from mfglauber.model_core import (
    ModelSpec,
    check_simplex,
    clgf_bc,
    grad_H,
    hamiltonian_density,
    legendre_transform,
    log_mgf_gamma,
    bc_rate_J,
    softmax,
    uniform_point,
)

LOG4 = np.log(4.0)
BETA_C_BC = LOG4
SCALAR_MESH = 1e-3
DEDUP_TOL = 1e-6


class OutOfRegimeWarning(UserWarning):
    """A closed form was evaluated outside the parameter range it describes."""


class MultiPhaseError(ValueError):
    """Raised when an operation needs a unique equilibrium macrostate."""

    def __init__(self, msg, minimizers=None):
        super().__init__(msg)
        self.minimizers = minimizers


@dataclass
class PhasePoint:
    beta: float
    minimizers: list
    min_value: float
    K: Optional[float] = None
    mesh: float = SCALAR_MESH

    @property
    def single_phase(self) -> bool:
        return len(self.minimizers) == 1


@dataclass
class CriticalValues:
    kc2: Optional[float] = None
    k1: Optional[float] = None
    kc1: Optional[float] = None
    wc: Optional[float] = None
    beta_c: Optional[float] = None
    beta_s: Optional[float] = None
    residuals: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# grids and small minimisation helpers


def simplex_grid(q: int, N: int) -> np.ndarray:
    """All integer count vectors of length ``q`` summing to ``N``, as an array.

    Rows come out in lexicographic order of the counts.
    """
    if q == 1:
        return np.array([[N]])
    rows = []
    for c0 in range(N, -1, -1):
        rest = simplex_grid(q - 1, N - c0)
        rows.append(np.column_stack([np.full(len(rest), c0), rest]))
    out = np.vstack(rows)
    return out[np.lexsort(out.T[::-1])]


def _scalar_local_minima(f, lo, hi, mesh, polish_tol=1e-12):
    """Local minima of a vectorised scalar function, grid scan then Brent."""
    x = np.linspace(lo, hi, int(round((hi - lo) / mesh)) + 1)
    v = f(x)
    out = []
    for j in range(len(x)):
        left = v[j - 1] if j > 0 else np.inf
        right = v[j + 1] if j < len(x) - 1 else np.inf
        if v[j] <= left and v[j] <= right and np.isfinite(v[j]):
            a, b = x[max(j - 1, 0)], x[min(j + 1, len(x) - 1)]
            res = minimize_scalar(lambda s: float(f(np.array([s]))[0]),
                                  bounds=(a, b), method="bounded",
                                  options={"xatol": polish_tol})
            cand = min([(res.fun, res.x), (v[j], x[j])])
            out.append(cand)
    # adjacent grid points can polish to the same well
    out.sort(key=lambda p: p[1])
    merged = []
    for val, pt in out:
        if merged and abs(pt - merged[-1][1]) < 10 * mesh:
            if val < merged[-1][0]:
                merged[-1] = (val, pt)
        else:
            merged.append((val, pt))
    return merged


def _polish_simplex(F, z0):
    """Nelder-Mead in softmax coordinates, so every iterate stays interior."""
    q = len(z0)
    u0 = np.log(np.clip(z0, 1e-300, None))
    u0 = u0[:-1] - u0[-1]
    wrap = lambda u: np.append(softmax(np.append(u, 0.0)), [])
    res = minimize(lambda u: F(wrap(u)), u0, method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-16,
                            "maxiter": 4000 * q, "maxfev": 8000 * q})
    z = wrap(res.x)
    fz = F(z)
    f0 = F(z0)
    return (z, fz) if fz <= f0 else (np.asarray(z0, float), f0)


def _default_grid_N(q: int) -> int:
    return 200 if q == 3 else (50 if q > 3 else 1000)


def relative_entropy_uniform(z) -> np.ndarray | float:
    """R(z | uniform) with the convention 0 log 0 = 0."""
    z = np.asarray(z, dtype=float)
    q = z.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(z > 0, z * np.log(z * q), 0.0)
    out = terms.sum(axis=-1)
    return out if np.ndim(out) else float(out)


def _entropy_energy(m: ModelSpec, z):
    return relative_entropy_uniform(z) + m.beta * hamiltonian_density(m, z)


# ---------------------------------------------------------------------------
# Blume-Capel


def free_energy_bc(beta: float, K: float, z):
    """G_{beta,K}(z) = beta K z^2 - c_beta(2 beta K z)."""
    z = np.asarray(z, dtype=float)
    out = beta * K * z**2 - clgf_bc(beta, 2 * beta * K * z, 0)
    return out if np.ndim(out) else float(out)


def _bc_I_unshifted(beta, K, z):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return np.atleast_1d(bc_rate_J(beta, z)) - beta * K * z**2


@lru_cache(maxsize=64)
def _bc_rate_infimum(beta: float, K: float) -> float:
    f = lambda z: _bc_I_unshifted(beta, K, z)
    return min(v for v, _ in _scalar_local_minima(f, -1.0, 1.0, 2e-3))


def rate_function_bc(beta: float, K: float, z):
    """I_{beta,K}(z) = J_beta(z) - beta K z^2 - inf_y {J_beta(y) - beta K y^2}."""
    scalar = np.ndim(z) == 0
    out = _bc_I_unshifted(beta, K, z) - _bc_rate_infimum(float(beta), float(K))
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def local_minimizers_bc(beta: float, K: float, which: str = "G", mesh: float = SCALAR_MESH):
    """Local minimum points on [-1, 1] of G_{beta,K} (``"G"``) or I_{beta,K} (``"I"``).

    Returned as a sorted array; the ``[(value, point)]`` pairs are available
    through ``local_minima_bc``.
    """
    return np.array([p for _, p in local_minima_bc(beta, K, which, mesh)])


def local_minima_bc(beta, K, which="G", mesh=SCALAR_MESH):
    if which == "G":
        f = lambda z: free_energy_bc(beta, K, z)
    elif which == "I":
        f = lambda z: _bc_I_unshifted(beta, K, z)
    else:
        raise ValueError("which must be 'G' or 'I'")
    return _scalar_local_minima(f, -1.0, 1.0, mesh)


def kc2(beta: float) -> float:
    """Second-order critical interaction (e^beta + 2) / (4 beta)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if beta > BETA_C_BC:
        warnings.warn(f"kc2 is only a critical value for beta <= log 4; got {beta}",
                      OutOfRegimeWarning, stacklevel=2)
    return (np.exp(beta) + 2) / (4 * beta)


def _require_first_order(beta):
    if beta <= BETA_C_BC:
        raise ValueError(f"beta = {beta} <= log 4: no first-order region")


def _tangency_w(beta: float) -> float:
    """Positive w where c'(w)/w is maximal, i.e. w c''(w) = c'(w)."""
    h = lambda w: w * clgf_bc(beta, w, 2) - clgf_bc(beta, w, 1)
    w = np.linspace(1e-3, 60.0, 60001)
    hv = h(w)
    idx = np.flatnonzero((hv[:-1] > 0) & (hv[1:] <= 0))
    if idx.size == 0:
        raise ValueError(f"no positive tangency point at beta = {beta}")
    j = idx[0]
    return brentq(h, w[j], w[j + 1], xtol=1e-15, rtol=1e-15)


def bc_G_derivatives(beta, K, z):
    """(G', G'') of G_{beta,K} at z."""
    a = 2 * beta * K
    return (a * z - a * clgf_bc(beta, a * z, 1),
            a - a * a * clgf_bc(beta, a * z, 2))


def k1(beta: float, full_output: bool = False):
    """Metastable critical value: the K at which G gets a positive double root."""
    _require_first_order(beta)
    w = _tangency_w(beta)
    K = w / (2 * beta * clgf_bc(beta, w, 1))
    if not full_output:
        return K
    z = w / (2 * beta * K)
    g1, g2 = bc_G_derivatives(beta, K, z)
    return K, z, {"G1": abs(g1), "G2": abs(g2)}


def _positive_well(beta, K, w_tan=None):
    """Positive local minimizer of G_{beta,K}, or None when there is none."""
    a = 2 * beta * K
    if w_tan is None:
        w_tan = _tangency_w(beta)
    f = lambda w: clgf_bc(beta, w, 1) - w / a
    if f(w_tan) < 0:
        return None
    w_hi = max(2 * a, w_tan + 1.0)
    w = brentq(f, w_tan, w_hi, xtol=1e-15, rtol=1e-15)
    return w / a


def kc1(beta: float, full_output: bool = False):
    """First-order critical value: the positive well of G reaches depth 0."""
    _require_first_order(beta)
    w_tan = _tangency_w(beta)
    lo = k1(beta) * (1 + 1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfRegimeWarning)
        hi = kc2(beta)

    def depth(K):
        z = _positive_well(beta, K, w_tan)
        return free_energy_bc(beta, K, z)

    if depth(hi) >= 0:
        raise ValueError(f"could not bracket kc1 at beta = {beta}")
    K = brentq(depth, lo, hi, xtol=1e-15, rtol=1e-15)
    if not full_output:
        return K
    z = _positive_well(beta, K, w_tan)
    return K, z, {"depth": abs(free_energy_bc(beta, K, z))}


def wc(beta: float) -> float:
    arg = 0.5 * np.exp(beta) - 4 * np.exp(-beta)
    if arg < 1 - 1e-15:
        raise ValueError(f"wc undefined: argument {arg} < 1 at beta = {beta}")
    return float(np.arccosh(max(arg, 1.0)))


# ---------------------------------------------------------------------------
# Potts-type families


def _check_potts(m: ModelSpec):
    if not m.separable:
        raise ValueError("this operation needs a CWP or GCWP model")


def neg_H_conjugate(m: ModelSpec, y, npts: int = 257, rounds: int = 4):
    """(-H)^* over the box [0,1]^q, coordinate by coordinate.

    For separable H the sup over the box splits into q one-dimensional
    transforms of x^r / r on [0, 1].
    """
    _check_potts(m)
    y = np.asarray(y, dtype=float)
    f = lambda x: x**m.r / m.r
    flat = y.reshape(-1)
    # the box is closed, so every slope is admissible
    vals = _box_conjugate(f, flat, npts, rounds)
    out = vals.reshape(y.shape).sum(axis=-1)
    return out if np.ndim(out) else float(out)


def _box_conjugate(f, y, npts, rounds):
    lo, hi = 0.0, 1.0
    x = np.linspace(lo, hi, npts)
    vals = np.outer(y, x) - f(x)[None, :]
    j = np.argmax(vals, axis=1)
    step = np.full(len(y), x[1] - x[0])
    best = x[j]
    bestv = vals[np.arange(len(y)), j]
    t = np.linspace(-1.0, 1.0, npts)[None, :]
    for _ in range(rounds):
        xs = np.clip(best[:, None] + step[:, None] * t, lo, hi)
        v = y[:, None] * xs - f(xs)
        j = np.argmax(v, axis=1)
        best = xs[np.arange(len(y)), j]
        bestv = np.maximum(bestv, v[np.arange(len(y)), j])
        step = step * 2 / (npts - 1)
    return bestv


def free_energy_general(m: ModelSpec, z):
    """G_beta(z) = beta (-H)^*(-grad H(z)) - Gamma(-beta grad H(z))."""
    _check_potts(m)
    z = check_simplex(z, m.q)
    gh = grad_H(m, z)
    out = m.beta * neg_H_conjugate(m, -gh) - log_mgf_gamma(m.q, -m.beta * gh)
    return out if np.ndim(out) else float(out)


def _symmetric_images(z):
    return {tuple(np.asarray(p)) for p in permutations(z)}


def _minimize_simplex(F, q, N=None, starts_extra=()):
    """Global minimum of a smooth symmetric function on the simplex.

    Grid scan, then Nelder-Mead polish from the best grid point, the best
    point away from the centre and any extra starts.
    """
    N = N or _default_grid_N(q)
    grid = simplex_grid(q, N) / N
    vals = F(grid)
    u = uniform_point(q)
    starts = [grid[np.argmin(vals)]]
    far = np.abs(grid - u).sum(axis=1) > 0.05
    if far.any():
        starts.append(grid[far][np.argmin(vals[far])])
    starts.extend(np.asarray(s, float) for s in starts_extra)
    starts.append(u)
    f1 = lambda z: float(F(z))
    found = [_polish_simplex(f1, s) for s in starts]
    return found, N


def _potts_min(m: ModelSpec, N=None):
    F = lambda z: _entropy_energy(m, z)
    found, N = _minimize_simplex(F, m.q, N)
    return found, N


@lru_cache(maxsize=256)
def _potts_infimum(m: ModelSpec) -> float:
    found, _ = _potts_min(m)
    return min(v for _, v in found)


def rate_function_general(m: ModelSpec, z):
    """I_beta(z) = R(z|rho) + beta H(z) - inf {R + beta H}."""
    _check_potts(m)
    z = check_simplex(z, m.q)
    out = np.maximum(_entropy_energy(m, z) - _potts_infimum(m), 0.0)
    return out if np.ndim(out) else float(out)


def equilibrium_macrostates(m: ModelSpec, N: Optional[int] = None,
                            mesh: float = SCALAR_MESH, tie_tol: float = 1e-9) -> PhasePoint:
    """Global minimizers of the free energy, closed under the model symmetry."""
    if m.family == "bc":
        wells = local_minima_bc(m.beta, m.K, "G", mesh)
        vmin = min(v for v, _ in wells)
        pts = sorted({round(p, 12) for v, p in wells if v - vmin <= tie_tol})
        pts = [p if abs(p) > DEDUP_TOL else 0.0 for p in pts]
        # enforce z -> -z symmetry of the set
        pts = sorted(set(pts) | {-p for p in pts})
        pts = _dedup_scalar(pts)
        return PhasePoint(m.beta, pts, vmin, K=m.K, mesh=mesh)
    found, N = _potts_min(m, N)
    vmin = min(v for _, v in found)
    best = [z for z, v in found if v - vmin <= tie_tol]
    pts = []
    for z in best:
        for img in _symmetric_images(z):
            img = np.array(img)
            if all(np.abs(img - p).max() > DEDUP_TOL * 100 for p in pts):
                pts.append(img)
    if any(np.abs(p - uniform_point(m.q)).max() < 1e-4 for p in pts):
        pts = [uniform_point(m.q)] if len(pts) == 1 else pts
    return PhasePoint(m.beta, pts, vmin, mesh=1.0 / N)


def _dedup_scalar(pts):
    out = []
    for p in pts:
        if not out or abs(p - out[-1]) > DEDUP_TOL:
            out.append(p)
    return out


def unique_macrostate(m: ModelSpec):
    """The single equilibrium macrostate z_beta; raises MultiPhaseError otherwise."""
    ph = equilibrium_macrostates(m)
    if not ph.single_phase:
        raise MultiPhaseError(
            f"{m.label()} has {len(ph.minimizers)} equilibrium macrostates",
            ph.minimizers)
    z = ph.minimizers[0]
    return np.asarray(z, float) if m.separable else float(z)


def spinodal_beta(q: int, r: float) -> float:
    """beta at which the uniform point loses local stability, q^{r-1}/(r-1)."""
    return q ** (r - 1) / (r - 1)


def mean_field_delta(u, beta, q, r):
    u = np.asarray(u, dtype=float)
    return -(beta / q ** (r - 1)) * ((1 + (q - 1) * u) ** (r - 1) - (1 - u) ** (r - 1))


def mean_field_rhs(u, beta, q, r):
    """Right-hand side of the mean-field equation u = F(u)."""
    e = np.exp(mean_field_delta(u, beta, q, r))
    return (1 - e) / (1 + (q - 1) * e)


def _ordered(m: ModelSpec, N: int, margin: float = 1e-12) -> bool:
    F = lambda z: _entropy_energy(m, z)
    found, _ = _minimize_simplex(F, m.q, N)
    f_u = float(F(uniform_point(m.q)))
    return min(v for _, v in found) < f_u - margin


def beta_c_gcwp(q: int, r: float, tol: float = 1e-5, N: Optional[int] = None,
                full_output: bool = False):
    """Inverse temperature at which the free-energy minimum leaves the uniform point."""
    N = N or _default_grid_N(q)
    lo, hi = 0.0, spinodal_beta(q, r) * 1.01
    ordered = lambda b: _ordered(ModelSpec.gcwp(q, r, b), N)
    tries = 0
    while not ordered(hi):
        lo, hi = hi, hi * 2
        tries += 1
        if tries > 20:
            raise RuntimeError(f"beta_c bracket failed: [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ordered(mid):
            hi = mid
        else:
            lo = mid
    bc = 0.5 * (lo + hi)
    return (bc, (lo, hi)) if full_output else bc


@lru_cache(maxsize=16)
def _beta_s_grid(q: int, N: int):
    c = simplex_grid(q, N)
    c = c[c[:, 0] * q > N]
    return c / N


def beta_s_margin(q: int, r: float, beta: float, N: Optional[int] = None):
    """max over grid of g_1(z) - z_1 on {z_1 > 1/q}, and the witness point."""
    N = N or _default_grid_N(q)
    z = _beta_s_grid(q, N)
    g = softmax(beta * z ** (r - 1))
    d = g[:, 0] - z[:, 0]
    j = int(np.argmax(d))
    return float(d[j]), z[j]


def beta_s(q: int, r: float, tol: float = 1e-5, N: Optional[int] = None,
           full_output: bool = False):
    """sup of beta with g_k(z) < z_k whenever z_k > 1/q, by bisection on a grid."""
    N = N or _default_grid_N(q)
    holds = lambda b: beta_s_margin(q, r, b, N)[0] < 0
    lo, hi = 0.0, spinodal_beta(q, r) * 1.5
    while holds(hi):
        lo, hi = hi, hi * 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return (lo, (lo, hi)) if full_output else lo


def local_contraction_limit(q: int, r: float, beta: float) -> float:
    """beta (r-1) q^{1-r}: the ratio |g(z)-g(u)|_1/|z-u|_1 as z approaches the centre."""
    return beta * (r - 1) * q ** (1 - r)


def critical_values_bc(beta: float) -> CriticalValues:
    cv = CriticalValues()
    if beta <= BETA_C_BC:
        cv.kc2 = kc2(beta)
        cv.residuals["kc2_identity"] = abs(cv.kc2 - 1 / (2 * beta * clgf_bc(beta, 0.0, 2)))
    else:
        K, _, res = k1(beta, full_output=True)
        cv.k1 = K
        cv.residuals.update({"k1_G1": res["G1"], "k1_G2": res["G2"]})
        K, _, res = kc1(beta, full_output=True)
        cv.kc1 = K
        cv.residuals["kc1_depth"] = res["depth"]
    if 0.5 * np.exp(beta) - 4 * np.exp(-beta) >= 1:
        cv.wc = wc(beta)
    return cv


def critical_values_gcwp(q: int, r: float) -> CriticalValues:
    bc, (lo, hi) = beta_c_gcwp(q, r, full_output=True)
    bs, (slo, shi) = beta_s(q, r, full_output=True)
    return CriticalValues(beta_c=bc, beta_s=bs,
                          residuals={"beta_c_bracket": hi - lo,
                                     "beta_s_bracket": shi - slo})

"""Numerical checks of the aggregate path-coupling conditions.

The aggregate g-variation of a path is the total variation of the update-law
vector ``g`` along it, summed over coordinates.  Along a straight segment
each ``g_k(z(t))`` is piecewise monotone, so once the sign changes of
``d/dt g_k`` are located the integral telescopes exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad

from mfglauber.equilibrium import (
    local_contraction_limit,
    simplex_grid,
    unique_macrostate,
)
from mfglauber.glauber import as_rng, g_vector
from mfglauber.model_core import ModelSpec, check_simplex, q_operator, softmax

VERDICT_MARGIN = 1e-3
BOUNDARY_MARGIN = 1e-6
REFINE_RTOL = 1e-6


def _need_separable(m: ModelSpec):
    if not m.separable:
        raise ValueError("aggregate checks are implemented for separable H (CWP/GCWP)")


def _g_and_rate(m: ModelSpec, Z, D):
    """g(Z) and the directional derivative dg/dt along D, both shape (..., q)."""
    g = softmax(-m.beta * (-(np.clip(Z, 0, None) ** (m.r - 1))))
    w = -m.beta * q_operator_unchecked(m, Z) * D
    h = g * (w - np.sum(g * w, axis=-1, keepdims=True))
    return g, h


def q_operator_unchecked(m: ModelSpec, Z):
    return -(m.r - 1) * np.clip(Z, 0, None) ** (m.r - 2)


def _segment_variation(m: ModelSpec, A, B, steps: int, bisect_iter: int = 60):
    """Aggregate variation along segments A[p] -> B[p], vectorised over p."""
    A = np.atleast_2d(A).astype(float)
    B = np.atleast_2d(B).astype(float)
    P, q = A.shape
    D = B - A
    t = np.linspace(0.0, 1.0, steps + 1)
    Z = A[:, None, :] + t[None, :, None] * D[:, None, :]
    g, h = _g_and_rate(m, Z, D[:, None, :])
    # plain telescoping of |Δg| on the sample grid
    total = np.abs(np.diff(g, axis=1)).sum(axis=(1, 2))
    sc = np.sign(h[:, :-1, :]) * np.sign(h[:, 1:, :]) < 0
    if sc.any():
        p_idx, j_idx, k_idx = np.nonzero(sc)
        lo = t[j_idx].copy()
        hi = t[j_idx + 1].copy()
        h_lo = h[p_idx, j_idx, k_idx]
        Dp = D[p_idx]
        Ap = A[p_idx]
        for _ in range(bisect_iter):
            mid = 0.5 * (lo + hi)
            _, hm = _g_and_rate(m, Ap + mid[:, None] * Dp, Dp)
            hk = hm[np.arange(len(mid)), k_idx]
            same = np.sign(hk) == np.sign(h_lo)
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        ts = 0.5 * (lo + hi)
        gs, _ = _g_and_rate(m, Ap + ts[:, None] * Dp, Dp)
        g_star = gs[np.arange(len(ts)), k_idx]
        g_left = g[p_idx, j_idx, k_idx]
        g_right = g[p_idx, j_idx + 1, k_idx]
        # replace |g_r - g_l| by the two monotone pieces through the extremum
        corr = np.abs(g_star - g_left) + np.abs(g_right - g_star) - np.abs(g_right - g_left)
        np.add.at(total, p_idx, corr)
    return total


def straight_line_variation(m: ModelSpec, A, B, steps: int = 32, rtol: float = REFINE_RTOL,
                            max_steps: int = 8192) -> np.ndarray:
    """Aggregate g-variation along straight segments, refined until stable.

    The sample grid doubles until every segment changes by less than ``rtol``
    (relative).  Segments that never settle are finished with adaptive
    quadrature of sum_k |d/dt g_k|.
    """
    _need_separable(m)
    A = np.atleast_2d(A).astype(float)
    B = np.atleast_2d(B).astype(float)
    cur = _segment_variation(m, A, B, steps)
    todo = np.arange(len(A))
    while todo.size and steps < max_steps:
        steps *= 2
        new = _segment_variation(m, A[todo], B[todo], steps)
        change = np.abs(new - cur[todo]) / np.maximum(np.abs(new), 1e-300)
        cur[todo] = new
        todo = todo[(change >= rtol) & (np.abs(new) > 1e-300)]
    for p in todo:
        cur[p] = _quad_variation(m, A[p], B[p])
    return cur


def _quad_variation(m, a, b):
    d = b - a

    def integrand(t):
        _, h = _g_and_rate(m, a + t * d, d)
        return float(np.abs(h).sum())

    val, _ = quad(integrand, 0.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-10)
    return val


def aggregate_g_variation(m: ModelSpec, path, quad_steps: int = 32) -> float:
    """Sum over coordinates of the total variation of g along a polyline.

    ``path`` is a sequence of simplex points; two points give a straight line.
    """
    pts = np.atleast_2d(np.asarray(path, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("a path needs at least two points")
    if quad_steps < 2:
        raise ValueError("quad_steps must be >= 2")
    check_simplex(pts, m.q, tol=1e-12)
    return float(straight_line_variation(m, pts[:-1], pts[1:], quad_steps).sum())


@lru_cache(maxsize=128)
def _macrostate(m: ModelSpec):
    return tuple(unique_macrostate(m))


def macrostate(m: ModelSpec) -> np.ndarray:
    _need_separable(m)
    return np.array(_macrostate(m))


def pseudo_distance(m: ModelSpec, z, z_ref=None) -> float:
    """Aggregate variation of the straight line from z_beta (or ``z_ref``) to ``z``.

    This is the straight-line upper bound on the pseudo-distance.  Without
    ``z_ref`` the model must have a unique equilibrium macrostate.
    """
    z = check_simplex(z, m.q)
    ref = macrostate(m) if z_ref is None else check_simplex(z_ref, m.q)
    if np.abs(z - ref).sum() == 0:
        return 0.0
    return float(straight_line_variation(m, ref, z)[0])


@dataclass
class ConditionReport:
    condition: str
    mesh: Optional[float]
    eps: Optional[float]
    worst_ratio: float
    witness: Optional[list]
    threshold: float
    verdict: str
    extra: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    @property
    def margin(self) -> float:
        return self.threshold - self.worst_ratio

    def to_dict(self) -> dict:
        out = asdict(self)
        out["margin"] = self.margin
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _verdict(worst, threshold):
    return "holds" if threshold - worst >= VERDICT_MARGIN else "fails"


def scan_points(q: int, mesh: float, margin: float = BOUNDARY_MARGIN) -> np.ndarray:
    N = int(round(1 / mesh))
    z = simplex_grid(q, N) / N
    return margin + (1 - q * margin) * z


def straight_line_ratios(m: ModelSpec, Z, z_ref) -> tuple[np.ndarray, np.ndarray]:
    """D(z_ref -> z) / |z - z_ref|_1 for each row of Z (rows at z_ref dropped)."""
    dist = np.abs(Z - z_ref).sum(axis=1)
    keep = dist > 1e-12
    Z = Z[keep]
    dist = dist[keep]
    D = straight_line_variation(m, np.broadcast_to(z_ref, Z.shape), Z)
    return D / dist, Z


def check_condition_uniform(m: ModelSpec, mesh: float = 0.01, z_ref=None,
                            local_radius: float = 1e-4) -> ConditionReport:
    """Worst straight-line ratio d_g(z, z_beta)/|z - z_beta|_1 over a simplex grid."""
    _need_separable(m)
    ref = macrostate(m) if z_ref is None else np.asarray(z_ref, float)
    ratios, Z = straight_line_ratios(m, scan_points(m.q, mesh), ref)
    j = int(np.argmax(ratios))
    worst = float(ratios[j])
    near = _local_sup(m, ref, local_radius, 64, np.random.default_rng(0))
    extra = {"delta_hat": 1 - worst, "points": int(len(Z)), "near_ratio": near}
    if m.family in ("cwp", "gcwp") and np.allclose(ref, 1 / m.q):
        extra["local_limit_formula"] = local_contraction_limit(m.q, m.r, m.beta)
    return ConditionReport("uniform", mesh, None, worst, Z[j].tolist(), 1.0,
                           _verdict(worst, 1.0), extra)


def riemann_ratios(m: ModelSpec, Z, z_ref, eps: float):
    """Riemann-sum ratios with L1 steps in [eps, 2 eps) along straight lines.

    Returns ``(ratio, exact_ratio, steps)`` for rows of Z at distance >= eps.
    """
    d = Z - z_ref
    dist = np.abs(d).sum(axis=1)
    r = np.floor(dist / eps + 1e-9).astype(int)
    out_rs = np.empty(len(Z))
    for steps in np.unique(r):
        sel = r == steps
        t = np.arange(steps) / steps
        P = z_ref[None, None, :] + t[None, :, None] * d[sel][:, None, :]
        _, h = _g_and_rate(m, P, d[sel][:, None, :])
        out_rs[sel] = np.abs(h).sum(axis=(1, 2)) / steps
    exact = straight_line_variation(m, np.broadcast_to(z_ref, Z.shape), Z)
    return out_rs / dist, exact / dist, r


def check_condition_rs(m: ModelSpec, eps: float = 0.02, mesh: float = 0.01,
                       z_ref=None, delta_hat: Optional[float] = None) -> ConditionReport:
    """Worst Riemann-sum ratio against the threshold 1 - delta_hat/3."""
    _need_separable(m)
    ref = macrostate(m) if z_ref is None else np.asarray(z_ref, float)
    if delta_hat is None:
        delta_hat = check_condition_uniform(m, mesh, ref).extra["delta_hat"]
    threshold = 1 - delta_hat / 3
    Z = scan_points(m.q, mesh)
    dist = np.abs(Z - ref).sum(axis=1)
    Z = Z[dist >= eps]
    if len(Z) == 0:
        return ConditionReport("rs", mesh, eps, -np.inf, None, threshold, "holds",
                               {"skipped": True, "points": 0, "delta_hat": delta_hat})
    rs, exact, r = riemann_ratios(m, Z, ref, eps)
    j = int(np.argmax(rs))
    dist = np.abs(Z - ref).sum(axis=1)
    gap = np.abs(rs - exact) * dist
    extra = {
        "delta_hat": delta_hat,
        "points": int(len(Z)),
        "skipped": False,
        "max_gap": float(gap.max()),
        "gap_constant": float(np.max(gap / (r * eps**2))),
        "max_gap_per_step": float(np.max(gap / r)),
    }
    return ConditionReport("rs", mesh, eps, float(rs[j]), Z[j].tolist(), threshold,
                           _verdict(float(rs[j]), threshold), extra)


def tangent_directions(q: int, count: int, rng) -> np.ndarray:
    """Unit-L1 directions summing to zero: the e_i - e_j family plus random ones."""
    base = []
    for i in range(q):
        for j in range(q):
            if i != j:
                v = np.zeros(q)
                v[i], v[j] = 0.5, -0.5
                base.append(v)
    R = rng.standard_normal((count, q))
    R -= R.mean(axis=1, keepdims=True)
    R /= np.abs(R).sum(axis=1, keepdims=True)
    return np.vstack([np.array(base), R])


def _local_sup(m, ref, radius, count, rng):
    dirs = tangent_directions(m.q, count, rng)
    Z = ref + radius * dirs
    Z = Z[np.all(Z >= 0, axis=1)]
    num = np.abs(g_vector(m, Z) - g_vector(m, ref)).sum(axis=1)
    return float(np.max(num / np.abs(Z - ref).sum(axis=1)))


def check_condition_local(m: ModelSpec, radii: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
                          directions: int = 200, seed=0, z_ref=None) -> ConditionReport:
    """Sup of |g(z) - g(z_beta)|_1 / |z - z_beta|_1 on shrinking L1 spheres."""
    _need_separable(m)
    radii = sorted(radii, reverse=True)
    ref = macrostate(m) if z_ref is None else np.asarray(z_ref, float)
    rng = as_rng(seed)
    sups = [_local_sup(m, ref, rho, directions, rng) for rho in radii]
    if len(radii) >= 2:
        r1, r2 = radii[-2], radii[-1]
        s1, s2 = sups[-2], sups[-1]
        limit = s2 - r2 * (s1 - s2) / (r1 - r2)
    else:
        limit = sups[-1]
    extra = {"radii": list(radii), "sups": sups}
    if np.allclose(ref, 1 / m.q):
        extra["local_limit_formula"] = local_contraction_limit(m.q, m.r, m.beta)
    return ConditionReport("local", None, None, float(limit), ref.tolist(), 1.0,
                           _verdict(float(limit), 1.0), extra)


@dataclass
class MonotonePath:
    points: np.ndarray
    monotone: np.ndarray

    @property
    def steps(self) -> np.ndarray:
        return np.abs(np.diff(self.points, axis=0)).sum(axis=1)


def monotone_path_interpolate(z_from, z_to, eps: float) -> MonotonePath:
    """Straight-line interpolation with equal L1 steps in [eps, 2 eps)."""
    a = check_simplex(z_from)
    b = check_simplex(z_to, len(a))
    dist = float(np.abs(b - a).sum())
    if dist == 0:
        raise ValueError("endpoints coincide")
    r = max(1, int(np.floor(dist / eps + 1e-9)))
    t = np.arange(r + 1) / r
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    pts[0], pts[-1] = a, b
    d = np.diff(pts, axis=0)
    mono = np.all(d >= 0, axis=0) | np.all(d <= 0, axis=0)
    return MonotonePath(pts, mono)

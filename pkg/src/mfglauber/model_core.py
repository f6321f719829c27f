"""Model family, macroscopic quantities and generating functions.

Spin labels are integers ``0 .. q-1``.  For Blume-Capel the labels map to the
physical spins through ``BC_SPINS`` i.e. ``(0, 1, 2) -> (-1, 0, +1)``, so one
configuration type serves every family.

All functions accept a single point (shape ``(q,)``) or a batch of points
(shape ``(..., q)``) and broadcast over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

SIMPLEX_TOL = 1e-12
BC_SPINS = np.array([-1, 0, 1])

FAMILIES = ("cwp", "gcwp", "bc")


@dataclass(frozen=True)
class ModelSpec:
    """A mean-field ensemble together with its inverse temperature.

    Use the ``cwp``, ``gcwp`` and ``blume_capel`` constructors rather than
    filling the fields by hand.
    """

    family: str
    beta: float
    q: int = 3
    r: float = 2.0
    K: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.q < 2 or int(self.q) != self.q:
            raise ValueError(f"q must be an integer >= 2, got {self.q}")
        if self.r < 2:
            raise ValueError(f"r must be >= 2, got {self.r}")
        if self.family == "bc":
            if self.K is None or self.K <= 0:
                raise ValueError("Blume-Capel needs K > 0")
            if self.q != 3:
                raise ValueError("Blume-Capel has exactly three spin values")
        elif self.family == "cwp" and self.r != 2:
            raise ValueError("CWP is the r = 2 member of the family; use gcwp")

    @classmethod
    def cwp(cls, q: int, beta: float) -> "ModelSpec":
        return cls("cwp", float(beta), q=int(q), r=2.0)

    @classmethod
    def gcwp(cls, q: int, r: float, beta: float) -> "ModelSpec":
        return cls("gcwp", float(beta), q=int(q), r=float(r))

    @classmethod
    def blume_capel(cls, K: float, beta: float) -> "ModelSpec":
        return cls("bc", float(beta), q=3, K=float(K))

    @property
    def separable(self) -> bool:
        """True when H is a sum of one-coordinate functions."""
        return self.family != "bc"

    def with_beta(self, beta: float) -> "ModelSpec":
        return ModelSpec(self.family, float(beta), q=self.q, r=self.r, K=self.K)

    def label(self) -> str:
        if self.family == "bc":
            return f"bc(K={self.K:g},beta={self.beta:g})"
        if self.family == "cwp":
            return f"cwp(q={self.q},beta={self.beta:g})"
        return f"gcwp(q={self.q},r={self.r:g},beta={self.beta:g})"


def check_simplex(z, q: Optional[int] = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Return ``z`` as a float array after checking it lies in the simplex."""
    z = np.asarray(z, dtype=float)
    if q is not None and z.shape[-1] != q:
        raise ValueError(f"expected {q} coordinates, got shape {z.shape}")
    if np.any(z < -tol) or np.any(z > 1 + tol):
        raise ValueError("simplex coordinates must lie in [0, 1]")
    if np.any(np.abs(z.sum(axis=-1) - 1.0) > max(tol, 1e-12 * z.shape[-1])):
        raise ValueError("simplex coordinates must sum to 1")
    return z


def uniform_point(q: int) -> np.ndarray:
    return np.full(q, 1.0 / q)


def counts_of(spins, q: int) -> np.ndarray:
    """Counts vector ``n L_n(spins)`` of a configuration."""
    spins = np.asarray(spins)
    if spins.size and (spins.min() < 0 or spins.max() >= q):
        raise ValueError(f"spin labels must be in 0..{q - 1}")
    return np.bincount(spins, minlength=q)


def bc_total_spin(spins) -> int:
    """Total spin S_n of a Blume-Capel configuration given as labels."""
    return int(BC_SPINS[np.asarray(spins)].sum())


def _coords(m: ModelSpec, z) -> np.ndarray:
    return check_simplex(z, m.q)


def hamiltonian_density(m: ModelSpec, z) -> np.ndarray | float:
    """Interaction representation function H(z), with H_n = n H(L_n)."""
    z = _coords(m, z)
    if m.family == "bc":
        zm, z0, zp = z[..., 0], z[..., 1], z[..., 2]
        out = zm + zp - m.K * (zp - zm) ** 2
    else:
        out = -np.sum(z**m.r, axis=-1) / m.r
    return out if np.ndim(out) else float(out)


def grad_H(m: ModelSpec, z) -> np.ndarray:
    z = _coords(m, z)
    if m.family == "bc":
        mag = z[..., 2] - z[..., 0]
        return np.stack(
            [1 + 2 * m.K * mag, np.zeros_like(mag), 1 - 2 * m.K * mag], axis=-1
        )
    return -(z ** (m.r - 1))


def q_operator(m: ModelSpec, z) -> np.ndarray:
    """Diagonal second partials ``(d_1^2 H, ..., d_q^2 H)``."""
    z = _coords(m, z)
    if m.family == "bc":
        out = np.empty_like(z)
        out[..., 0] = out[..., 2] = -2 * m.K
        out[..., 1] = 0.0
        return out
    # 0**0 == 1 in numpy, which is the right limit for r == 2
    return -(m.r - 1) * z ** (m.r - 2)


def log_mgf_gamma(q: int, z) -> np.ndarray | float:
    """Log moment generating function of a uniform spin, log((1/q) sum e^{z_k})."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != q:
        raise ValueError(f"expected {q} coordinates, got shape {z.shape}")
    out = logsumexp(z, axis=-1) - np.log(q)
    return out if np.ndim(out) else float(out)


def softmax(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def clgf_bc(beta: float, t, order: int = 0):
    """Cumulant generating function c_beta of the Blume-Capel single-spin law.

    ``order`` selects c, c' or c''.  Every branch is written in terms of
    ``exp(-|t|)`` so large arguments never overflow.
    """
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    ea = np.exp(-a)
    if order == 0:
        # log(1 + 2 e^{-b} cosh t) with 2 cosh t = e^{|t|} (1 + e^{-2|t|})
        log2cosh = a + np.log1p(ea * ea)
        out = np.logaddexp(0.0, -beta + log2cosh) - np.log1p(2 * np.exp(-beta))
    elif order == 1:
        # sinh t / (e^b / 2 + cosh t)
        out = np.sign(t) * (1 - ea * ea) / (np.exp(beta) * ea + 1 + ea * ea)
    elif order == 2:
        # (e^b/2 cosh t + 1) / (e^b/2 + cosh t)^2
        h = 0.5 * np.exp(beta)
        num = h * 0.5 * (ea + ea**3) + ea * ea
        den = (h * ea + 0.5 * (1 + ea * ea)) ** 2
        out = num / den
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out if np.ndim(out) else float(out)


def _sup_on_grid(f, y, lo, hi, npts):
    x = np.linspace(lo, hi, npts)
    vals = np.outer(y, x) - f(x)[None, :]
    j = np.argmax(vals, axis=1)
    return x, j


def legendre_transform(
    f: Callable[[np.ndarray], np.ndarray],
    y,
    lo: float,
    hi: float,
    npts: int = 2**12,
    rounds: int = 2,
    grad_tol: float = 1e-9,
):
    """Numeric Legendre-Fenchel transform ``sup_{x in [lo, hi]} {x y - f(x)}``.

    The supremum is located on a uniform grid, the grid is refined twice around
    the best cell, and a bounded Brent search polishes the final bracket.
    Points ``y`` outside the closure of the sampled gradient range of ``f`` get
    ``+inf``, marking them as outside the effective domain of the conjugate.

    ``f`` must be vectorised and convex on ``[lo, hi]``.
    """
    from scipy.optimize import minimize_scalar

    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = (hi - lo) * 1e-7
    g_lo = (f(np.array([lo + h])) - f(np.array([lo])))[0] / h
    g_hi = (f(np.array([hi])) - f(np.array([hi - h])))[0] / h
    span = max(1.0, abs(g_lo), abs(g_hi))
    outside = (y < g_lo - grad_tol * span) | (y > g_hi + grad_tol * span)

    out = np.full(y.shape, np.inf)
    inside = np.flatnonzero(~outside)
    if inside.size:
        yi = y[inside]
        x, j = _sup_on_grid(f, yi, lo, hi, npts)
        step = x[1] - x[0]
        a = np.maximum(lo, x[j] - step)
        b = np.minimum(hi, x[j] + step)
        for _ in range(rounds):
            # per-point refinement of the bracket around the current argmax
            t = np.linspace(0.0, 1.0, npts)[None, :]
            xs = a[:, None] + (b - a)[:, None] * t
            vals = yi[:, None] * xs - f(xs)
            j = np.argmax(vals, axis=1)
            step = (b - a) / (npts - 1)
            best = xs[np.arange(len(yi)), j]
            a = np.maximum(lo, best - step)
            b = np.minimum(hi, best + step)
        for idx, (yy, aa, bb) in enumerate(zip(yi, a, b)):
            obj = lambda s, yy=yy: -(s * yy - float(f(np.array([s]))[0]))
            cand = [aa, bb]
            if bb > aa:
                res = minimize_scalar(obj, bounds=(aa, bb), method="bounded",
                                      options={"xatol": 1e-14})
                cand.append(res.x)
            out[inside[idx]] = max(-obj(c) for c in cand)
    return out if out.size > 1 else float(out[0])


BC_T_RANGE = 60.0


def bc_rate_J(beta: float, z):
    """Cramer rate function J_beta, the conjugate of the BC cumulant function."""
    f = lambda t: clgf_bc(beta, t, 0)
    return legendre_transform(f, z, -BC_T_RANGE, BC_T_RANGE)


def random_simplex_points(q: int, size: int, rng, margin: float = 0.0) -> np.ndarray:
    """Uniform (Dirichlet(1)) points, optionally shrunk away from the boundary."""
    z = rng.dirichlet(np.ones(q), size=size)
    if margin:
        z = margin + (1 - q * margin) * z
    return z

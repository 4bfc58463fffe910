"""Scalar and vectorized special functions used throughout the package.

Legendre polynomials here are shifted to [0, 1] and orthonormal, i.e.
``int_0^1 Leg_j(u)^2 du = 1`` and ``int_0^1 Leg_j(u) du = 0``.  The first
three are::

    Leg_1(u) = sqrt(3) * (2u - 1)
    Leg_2(u) = sqrt(5) * (6u^2 - 6u + 1)
    Leg_3(u) = sqrt(7) * (20u^3 - 30u^2 + 12u - 1)
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

__all__ = [
    "BetaParams",
    "EPS",
    "legendre",
    "legendre_basis",
    "legendre_antiderivative",
    "legendre_antiderivative_basis",
    "beta_pdf",
    "beta_cdf",
    "beta_quantile",
    "std_normal_cdf",
    "std_normal_quantile",
]

# Interior clamp for evaluating singular carriers.
EPS = 1e-12

_CF_MAX_ITER = 1000
_CF_TOL = 1e-15
_TINY = 1e-300


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters (gamma, beta) of a beta carrier density on (0, 1)."""

    gamma: float
    beta: float

    def __post_init__(self):
        for name in ("gamma", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v > 0):
                raise ValueError(f"beta parameter {name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, float(v))

    @property
    def log_norm(self) -> float:
        """log(1 / B(gamma, beta))."""
        return math.lgamma(self.gamma + self.beta) - math.lgamma(self.gamma) - math.lgamma(self.beta)

    @property
    def is_uniform(self) -> bool:
        return self.gamma == 1.0 and self.beta == 1.0


def _check_degree(j):
    if isinstance(j, bool) or not isinstance(j, (int, np.integer)) or j < 1:
        raise ValueError(f"Legendre degree must be a positive integer, got {j!r}")


def _check_unit(u, name="u"):
    arr = np.asarray(u, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def _legendre_p(n_max: int, y: np.ndarray) -> np.ndarray:
    """Classical Legendre P_0..P_n_max on [-1, 1]; shape (n_max + 1,) + y.shape."""
    out = np.empty((n_max + 1,) + y.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = y
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1) * y * out[n] - n * out[n - 1]) / (n + 1)
    return out


def legendre_basis(u, m: int) -> np.ndarray:
    """Evaluate Leg_1..Leg_m at every point of ``u``.

    Returns an array of shape ``u.shape + (m,)``.
    """
    _check_degree(m)
    arr = _check_unit(u)
    p = _legendre_p(m, 2.0 * arr - 1.0)[1:]
    scale = np.sqrt(2.0 * np.arange(1, m + 1) + 1.0)
    return np.moveaxis(p, 0, -1) * scale


def legendre(j: int, u):
    """Orthonormal shifted Legendre polynomial Leg_j(u) on [0, 1]."""
    _check_degree(j)
    arr = _check_unit(u)
    val = math.sqrt(2 * j + 1) * _legendre_p(j, 2.0 * arr - 1.0)[j]
    return float(val) if np.ndim(u) == 0 else val


def legendre_antiderivative_basis(x, m: int) -> np.ndarray:
    """G_j(x) = int_0^x Leg_j(t) dt for j = 1..m, shape ``x.shape + (m,)``.

    Uses the identity (2j+1) P_j = P'_{j+1} - P'_{j-1}, so
    G_j(x) = (P_{j+1}(y) - P_{j-1}(y)) / (2 sqrt(2j+1)) with y = 2x - 1.
    """
    _check_degree(m)
    arr = _check_unit(x, "x")
    p = _legendre_p(m + 1, 2.0 * arr - 1.0)
    j = np.arange(1, m + 1)
    g = (p[2:] - p[:-2]) / (2.0 * np.sqrt(2.0 * j + 1.0)).reshape((-1,) + (1,) * arr.ndim)
    return np.moveaxis(g, 0, -1)


def legendre_antiderivative(j: int, x):
    _check_degree(j)
    arr = _check_unit(x, "x")
    p = _legendre_p(j + 1, 2.0 * arr - 1.0)
    val = (p[j + 1] - p[j - 1]) / (2.0 * math.sqrt(2 * j + 1))
    return float(val) if np.ndim(x) == 0 else val


# -- beta distribution ------------------------------------------------------


def beta_pdf(u, p: BetaParams):
    """Beta density, computed in log space.

    At an endpoint where the density is unbounded (gamma < 1 at 0, beta < 1
    at 1) the result is ``+inf``.
    """
    arr = _check_unit(u)
    logd = np.full(arr.shape, p.log_norm)
    with np.errstate(divide="ignore", invalid="ignore"):
        if p.gamma != 1.0:
            logd = logd + (p.gamma - 1.0) * np.log(arr)
        if p.beta != 1.0:
            logd = logd + (p.beta - 1.0) * np.log1p(-arr)
    out = np.exp(logd)
    return float(out) if np.ndim(u) == 0 else out


def _betacf(a: float, b: float, x: np.ndarray, steps: int) -> np.ndarray:
    """Incomplete beta continued fraction evaluated bottom-up to a fixed depth.

    The depth depends only on (a, b), so a value's result never depends on
    which other values share its batch.
    """
    qab = a + b
    f = np.ones_like(x)
    for k in range(steps, 0, -1):
        m2 = 2 * k
        f = 1.0 + (-(a + k) * (qab + k) / ((a + m2) * (a + 1.0 + m2))) * x / f
        f = 1.0 + (k * (b - k) / ((a - 1.0 + m2) * (a + m2))) * x / f
    f = 1.0 + (-qab / (a + 1.0)) * x / f
    return 1.0 / f


@functools.lru_cache(maxsize=256)
def _cf_steps(a: float, b: float) -> int:
    """Depth the fraction needs at its slowest point, the switch
    x = (a + 1) / (a + b + 2), plus a safety margin.  Found with the
    forward Lentz recursion."""
    x = (a + 1.0) / (a + b + 2.0)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) >= _TINY else _TINY)
    for k in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * k
        for aa in (k * (b - k) * x / ((qam + m2) * (a + m2)),
                   -(a + k) * (qab + k) * x / ((a + m2) * (qap + m2))):
            d = 1.0 + aa * d
            d = 1.0 / (d if abs(d) >= _TINY else _TINY)
            c = 1.0 + aa / c
            c = c if abs(c) >= _TINY else _TINY
        if abs(d * c - 1.0) < _CF_TOL:
            return min(k + 8, _CF_MAX_ITER)
    return _CF_MAX_ITER


def _beta_series(a, b, x):
    """Power series for I_x(a, b); used where the continued fraction breaks down."""
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        ai, bi, xi = float(a[idx]), float(b[idx]), float(x[idx])
        term, total, n = 1.0, 1.0 / ai, 1
        while n < 100000:
            term *= (n - bi) * xi / n
            inc = term / (ai + n)
            total += inc
            if abs(inc) < 1e-17 * abs(total):
                break
            n += 1
        log_front = ai * math.log(xi) + math.lgamma(ai + bi) - math.lgamma(ai) - math.lgamma(bi)
        out[idx] = math.exp(log_front) * total
    return out


def _regularized_incbeta(a: float, b: float, x: np.ndarray) -> np.ndarray:
    """I_x(a, b) for x strictly inside (0, 1)."""
    x = np.asarray(x, dtype=float).ravel()
    out = np.empty_like(x)
    flip = x >= (a + 1.0) / (a + b + 2.0)
    # the fraction converges fast below the switch point; use symmetry above it
    for mask, aa, bb, xx, flipped in ((~flip, a, b, x[~flip], False), (flip, b, a, 1.0 - x[flip], True)):
        if not xx.size:
            continue
        front = np.exp(math.lgamma(aa + bb) - math.lgamma(aa) - math.lgamma(bb)
                       + aa * np.log(xx) + bb * np.log1p(-xx))
        with np.errstate(divide="ignore", invalid="ignore"):
            val = front * _betacf(aa, bb, xx, _cf_steps(aa, bb)) / aa
        bad = ~np.isfinite(val)
        if bad.any():
            val[bad] = _beta_series(np.full(bad.sum(), aa), np.full(bad.sum(), bb), xx[bad])
        out[mask] = 1.0 - val if flipped else val
    return out


def beta_cdf(u, p: BetaParams):
    """Regularized incomplete beta function I_u(gamma, beta)."""
    arr = _check_unit(u)
    flat = arr.ravel()
    out = np.empty_like(flat)
    out[flat <= 0.0] = 0.0
    out[flat >= 1.0] = 1.0
    inner = (flat > 0.0) & (flat < 1.0)
    if inner.any():
        if p.is_uniform:
            out[inner] = flat[inner]
        else:
            out[inner] = _regularized_incbeta(p.gamma, p.beta, flat[inner])
    out = np.clip(out, 0.0, 1.0).reshape(arr.shape)
    return float(out) if np.ndim(u) == 0 else out


def beta_quantile(q, p: BetaParams):
    """Smallest double x with beta_cdf(x) >= q, by vectorized bisection.

    Bisection runs until the bracket is one ulp wide; near a steep end of
    the carrier a relative stopping rule would leave F(x) visibly off q.
    """
    arr = _check_unit(q, "q")
    lo = np.zeros_like(arr, dtype=float)
    hi = np.ones_like(arr, dtype=float)
    for _ in range(1100):
        mid = 0.5 * (lo + hi)
        active = (mid > lo) & (mid < hi)
        if not active.any():
            break
        below = beta_cdf(mid, p) < arr
        lo = np.where(active & below, mid, lo)
        hi = np.where(active & ~below, mid, hi)
    out = np.where(arr <= 0.0, 0.0, hi)
    return float(out) if np.ndim(q) == 0 else out


# -- standard normal ----------------------------------------------------------


def std_normal_cdf(z):
    out = sp.ndtr(np.asarray(z, dtype=float))
    return float(out) if np.ndim(z) == 0 else out


def std_normal_quantile(q):
    arr = np.asarray(q, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("normal quantile requires q in (0, 1)")
    out = sp.ndtri(arr)
    return float(out) if np.ndim(q) == 0 else out

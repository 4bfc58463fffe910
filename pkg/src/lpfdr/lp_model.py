"""Skew-beta comparison density model.

The estimated comparison density is

    d(u) = f_B(u; gamma, beta) * {1 + sum_j LP[j] * Leg_j(F_B(u; gamma, beta))}

where the LP coefficients are sample means of Legendre scores evaluated at the
beta-transformed p-values.  With a uniform carrier F_B is the identity.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi

from .accumulate import fixed_mean, fixed_sums
from .special import (
    EPS,
    BetaParams,
    beta_cdf,
    beta_pdf,
    legendre_antiderivative_basis,
    legendre_basis,
)

logger = logging.getLogger(__name__)

DEFAULT_M = 8
MAX_M = 20
PARAM_FLOOR = 1e-4
PARAM_CEIL = 1e4
ETA_GRID_SIZE = 1024


class DataError(ValueError):
    """Input values violate the (0, 1) p-value contract."""


class DegenerateDataError(ValueError):
    """Moments describe a zero-variance sample; no carrier can be fitted."""


class InfeasibleMomentsError(ValueError):
    """Moments cannot come from a random variable on (0, 1)."""


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LPCoefficients:
    """LP-Fourier coefficients LP[1..m] in a beta or uniform basis.

    ``carrier`` is ``None`` for the uniform basis.
    """

    values: tuple
    carrier: Optional[BetaParams] = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("LP coefficient vector must have m >= 1 entries")
        bound = np.sqrt(2.0 * np.arange(1, len(vals) + 1) + 1.0)
        arr = np.asarray(vals)
        if not np.all(np.isfinite(arr)):
            raise ValueError("LP coefficients must be finite")
        if np.any(np.abs(arr) > bound * (1 + 1e-12)):
            raise ValueError("LP coefficient exceeds the sup-norm of its score function")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def is_uniform(self) -> bool:
        return self.carrier is None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def _validated_values(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise DataError("empty partition: no p-values to summarize")
    bad = np.flatnonzero(~((arr > 0.0) & (arr < 1.0)))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"p-value at index {i} is {arr[i]!r}, outside (0, 1)")
    return arr


def score_matrix(values, carrier: Optional[BetaParams], m: int) -> np.ndarray:
    """Leg_j(F_B(u_i)) for every value and j = 1..m; shape (n, m)."""
    arr = _validated_values(values)
    t = arr if carrier is None or carrier.is_uniform else beta_cdf(arr, carrier)
    return legendre_basis(t, m)


def score_sums(values, carrier: Optional[BetaParams], m: int) -> list[int]:
    """Exact fixed-point totals of the Legendre scores (see :mod:`.accumulate`)."""
    return fixed_sums(score_matrix(values, carrier, m))


def lp_coefficients(values, carrier: Optional[BetaParams], m: int) -> LPCoefficients:
    """Sample LP coefficients LP[j] = n^-1 sum_i Leg_j(F_B(u_i)).

    Pass ``carrier=None`` for the uniform basis.
    """
    if not 1 <= m <= MAX_M:
        raise ValueError(f"truncation order m must lie in [1, {MAX_M}], got {m}")
    arr = _validated_values(values)
    totals = score_sums(arr, carrier, m)
    return LPCoefficients(tuple(fixed_mean(t, arr.size) for t in totals), carrier)


def fit_beta_moments(m1: float, m2: float) -> BetaParams:
    """Method-of-moments beta fit from the first two raw moments."""
    if not 0.0 < m1 < 1.0:
        raise InfeasibleMomentsError(f"first moment {m1!r} outside (0, 1)")
    var = m2 - m1 * m1
    if var <= 0.0:
        raise DegenerateDataError(
            f"zero or negative variance (m1={m1!r}, m2={m2!r}); all p-values identical?"
        )
    if m2 >= m1:
        raise InfeasibleMomentsError(f"second moment {m2!r} >= first moment {m1!r}")
    common = (m1 - m2) / var
    gamma, beta = m1 * common, (1.0 - m1) * common
    clamped = []
    for name, v in (("gamma", gamma), ("beta", beta)):
        c = min(max(v, PARAM_FLOOR), PARAM_CEIL)
        if c != v:
            warnings.warn(
                f"fitted carrier {name}={v:.6g} clamped to {c:.6g}",
                IllConditionedWarning,
                stacklevel=2,
            )
        clamped.append(c)
    return BetaParams(*clamped)


def aic_path(raw: LPCoefficients, n_total: int) -> np.ndarray:
    """AIC(0..m) for coefficients entered in decreasing magnitude."""
    sq = np.sort(raw.as_array() ** 2)[::-1]
    k = np.arange(0, raw.m + 1)
    return np.concatenate([[0.0], np.cumsum(sq)]) - 2.0 * k / n_total


def select_coefficients_aic(raw: LPCoefficients, n_total: int) -> LPCoefficients:
    """Keep the k largest-magnitude coefficients, k maximizing AIC(k).

    AIC(k) = (sum of the k largest squared coefficients) - 2k / N, with
    AIC(0) = 0.  Ties go to the smaller k.
    """
    if n_total < 1:
        raise ValueError("n_total must be a positive integer")
    vals = raw.as_array()
    k = int(np.argmax(aic_path(raw, n_total)))
    # stable order so equal magnitudes keep the lower index first
    order = np.argsort(-(vals ** 2), kind="stable")
    keep = np.zeros(raw.m, dtype=bool)
    keep[order[:k]] = True
    return LPCoefficients(tuple(np.where(keep, vals, 0.0)), raw.carrier)


@dataclass(frozen=True)
class SkewBetaModel:
    """Estimated comparison density: beta carrier times an LP correction.

    Instances are immutable.  When the truncated series dips below zero the
    bracket ``1 + sum LP[j] Leg_j`` is clipped at 0 and renormalized;
    ``repair_applied`` reports whether that happened.
    """

    carrier: BetaParams
    coefficients: tuple
    n_total: int
    eta: float = 1.0

    def __post_init__(self):
        coeffs = self.coefficients
        if isinstance(coeffs, LPCoefficients):
            if coeffs.carrier is not None and coeffs.carrier != self.carrier:
                raise ValueError("coefficient basis does not match the model carrier")
            coeffs = coeffs.values
        coeffs = LPCoefficients(tuple(coeffs), self.carrier).values
        object.__setattr__(self, "coefficients", coeffs)
        if int(self.n_total) < 1:
            raise ValueError("n_total must be positive")
        object.__setattr__(self, "n_total", int(self.n_total))
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta!r}")
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def m(self) -> int:
        return len(self.coefficients)

    def with_eta(self, eta: float) -> "SkewBetaModel":
        return SkewBetaModel(self.carrier, self.coefficients, self.n_total, eta)

    # -- the bracket as a Legendre series in y = 2t - 1 ------------------------

    @cached_property
    def _series(self) -> np.ndarray:
        c = np.asarray(self.coefficients)
        scale = np.sqrt(2.0 * np.arange(1, self.m + 1) + 1.0)
        return np.concatenate([[1.0], c * scale])

    @cached_property
    def _positive_pieces(self) -> list:
        """Subintervals of [0, 1] (t scale) where the bracket is positive."""
        # negligible trailing terms make the companion matrix ill-conditioned
        series = npleg.legtrim(self._series, tol=1e-15 * float(np.max(np.abs(self._series))))
        roots = npleg.legroots(series) if series.size > 1 else np.array([])
        roots = np.real(roots[np.abs(np.imag(roots)) < 1e-6]) if roots.size else roots
        cuts = sorted({0.0, 1.0, *[(r + 1.0) / 2.0 for r in roots if -1.0 < r < 1.0]})
        pieces: list = []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi > lo and self._bracket_t(np.array([0.5 * (lo + hi)]))[0] > 0.0:
                if pieces and pieces[-1][1] == lo:
                    lo = pieces.pop()[0]
                pieces.append((lo, hi))
        return pieces

    @cached_property
    def repair_applied(self) -> bool:
        return self._positive_pieces != [(0.0, 1.0)]

    @cached_property
    def _norm(self) -> float:
        if not self.repair_applied:
            return 1.0
        total = sum(self._bracket_integral(hi) - self._bracket_integral(lo) for lo, hi in self._positive_pieces)
        if total <= 0.0:
            raise ValueError("LP correction is nonpositive everywhere; not a density")
        return total

    def _bracket_t(self, t: np.ndarray) -> np.ndarray:
        return npleg.legval(2.0 * t - 1.0, self._series)

    def _bracket_integral(self, t) -> np.ndarray:
        """int_0^t bracket, via the closed-form Legendre antiderivatives."""
        t = np.asarray(t, dtype=float)
        g = legendre_antiderivative_basis(t, self.m)
        return t + g @ np.asarray(self.coefficients)

    def _positive_integral(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros_like(t)
        for lo, hi in self._positive_pieces:
            tc = np.clip(t, lo, hi)
            out += self._bracket_integral(tc) - self._bracket_integral(np.full_like(t, lo))
        return out

    # -- public evaluation ------------------------------------------------------

    def transform(self, u) -> np.ndarray:
        """F_B(u) on the carrier scale."""
        arr = np.asarray(u, dtype=float)
        return arr if self.carrier.is_uniform else beta_cdf(arr, self.carrier)

    def density(self, u):
        arr = np.asarray(u, dtype=float)
        if np.any(~((arr > 0.0) & (arr < 1.0))):
            raise ValueError("density is defined for u in (0, 1)")
        t = self.transform(arr)
        bracket = self._bracket_t(t)
        if self.repair_applied:
            bracket = np.maximum(bracket, 0.0) / self._norm
        out = beta_pdf(arr, self.carrier) * bracket
        return float(out) if np.ndim(u) == 0 else out

    def raw_density(self, u):
        """Density without the nonnegativity repair; may be negative."""
        arr = np.asarray(u, dtype=float)
        if np.any(~((arr > 0.0) & (arr < 1.0))):
            raise ValueError("density is defined for u in (0, 1)")
        out = beta_pdf(arr, self.carrier) * self._bracket_t(self.transform(arr))
        return float(out) if np.ndim(u) == 0 else out

    def cdf(self, u):
        """D(u) = F_B(u) + sum_j LP[j] G_j(F_B(u)), using t = F_B(v)."""
        arr = np.asarray(u, dtype=float)
        if np.any(~((arr >= 0.0) & (arr <= 1.0))):
            raise ValueError("cdf is defined for u in [0, 1]")
        t = np.atleast_1d(self.transform(arr))
        if self.repair_applied:
            out = self._positive_integral(t) / self._norm
        else:
            out = self._bracket_integral(t)
        out = np.where(arr.ravel() <= 0.0, 0.0, np.where(arr.ravel() >= 1.0, 1.0, out.ravel()))
        out = np.clip(out, 0.0, 1.0).reshape(arr.shape)
        return float(out) if np.ndim(u) == 0 else out

    def to_dict(self) -> dict:
        return {
            "gamma": self.carrier.gamma,
            "beta": self.carrier.beta,
            "m": self.m,
            "coefficients": list(self.coefficients),
            "n_total": self.n_total,
            "eta": self.eta,
            "repair_applied": bool(self.repair_applied),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkewBetaModel":
        coeffs = d["coefficients"]
        if len(coeffs) != d["m"]:
            raise ValueError("model JSON: len(coefficients) != m")
        return cls(BetaParams(d["gamma"], d["beta"]), tuple(coeffs), d["n_total"], d["eta"])


def density_eval(model: SkewBetaModel, u):
    return model.density(u)


def cdf_eval(model: SkewBetaModel, u):
    return model.cdf(u)


def interior_grid(size: int) -> np.ndarray:
    return (np.arange(size) + 0.5) / size


def estimate_eta(model: SkewBetaModel, grid_size: int = ETA_GRID_SIZE) -> float:
    """Null proportion as the grid minimum of the density, clamped to (0, 1]."""
    dmin = float(np.min(model.density(interior_grid(grid_size))))
    if dmin <= 0.0:
        # repaired density touches zero; keep eta strictly positive
        logger.warning("density minimum is %g; using eta = %g", dmin, EPS)
        return EPS
    return min(1.0, dmin)


def beta_gram(carrier: BetaParams, m: int) -> np.ndarray:
    """E_G[Leg_j(U) Leg_k(U)] under U ~ Beta(gamma, beta), j, k = 1..m.

    Gauss-Jacobi quadrature with m + 2 nodes integrates these degree <= 2m
    polynomials exactly against the beta weight.
    """
    # weight (1-x)^(beta-1) (1+x)^(gamma-1) on [-1, 1] maps to the beta law on u = (1+x)/2
    x, w = roots_jacobi(m + 2, carrier.beta - 1.0, carrier.gamma - 1.0)
    w = w / w.sum()
    basis = legendre_basis(np.clip((1.0 + x) / 2.0, 0.0, 1.0), m)
    return (basis * w[:, None]).T @ basis


def chi_square_divergence(coeffs: LPCoefficients) -> float:
    """Chi-square divergence of the LP-represented density from its carrier.

    For the uniform basis this is the sum of squared coefficients; for a beta
    basis the Legendre cross moments under the carrier enter as a Gram matrix.
    """
    c = coeffs.as_array()
    if coeffs.is_uniform:
        return math.fsum(c * c)
    gram = beta_gram(coeffs.carrier, coeffs.m)
    return max(0.0, float(c @ gram @ c))


def build_model(
    carrier: BetaParams,
    raw: LPCoefficients,
    n_total: int,
    eta: Optional[float] = None,
) -> SkewBetaModel:
    """AIC-select ``raw`` and wrap it in a model, estimating eta unless given."""
    if raw.carrier != carrier:
        raise ValueError("raw coefficients were computed under a different carrier")
    selected = select_coefficients_aic(raw, n_total)
    model = SkewBetaModel(carrier, selected.values, n_total, 1.0)
    return model.with_eta(estimate_eta(model) if eta is None else eta)


def sample_model(model: SkewBetaModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` values from the (repaired) model density by rejection."""
    t_grid = np.linspace(0.0, 1.0, 4097)
    bound = float(np.max(np.maximum(model._bracket_t(t_grid), 0.0))) * 1.05
    out: list[np.ndarray] = []
    have = 0
    while have < n:
        u = rng.beta(model.carrier.gamma, model.carrier.beta, size=max(1024, 2 * (n - have)))
        u = np.clip(u, EPS, 1.0 - EPS)
        keep = rng.random(u.size) * bound < np.maximum(model._bracket_t(model.transform(u)), 0.0)
        out.append(u[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:n]

"""Per-partition summaries (map side) and their merges (reduce side).

Round 1 ships a :class:`MomentSummary` per partition; the coordinator merges
them, fits the beta carrier and broadcasts it.  Round 2 ships an
:class:`LPSummary` per partition computed under that carrier.  Both summaries
have a size that depends on ``m`` only, never on the number of p-values.

Summaries carry exact fixed-point score totals next to the float means, so a
merge reproduces the pooled computation bit for bit regardless of how the
data were partitioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .accumulate import fixed_mean, fixed_sums
from .lp_model import (
    DEFAULT_M,
    LPCoefficients,
    SkewBetaModel,
    _validated_values,
    build_model,
    fit_beta_moments,
    score_sums,
)
from .special import BetaParams

CLAMP_LO = 1e-15
CLAMP_HI = 1.0 - 1e-15


class ProtocolError(ValueError):
    """Summaries that cannot be merged (duplicate ids, mixed carriers or orders)."""


@dataclass(frozen=True, eq=False)
class PValuePartition:
    """One shard of p-values.

    ``signs`` optionally records the sign of the originating z-statistic for
    each value, used only for left/right tail accounting of rejections.
    """

    id: str
    values: np.ndarray
    origin: Optional[str] = None
    signs: Optional[np.ndarray] = None

    def __post_init__(self):
        arr = _validated_values(self.values)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.signs is not None:
            s = np.asarray(self.signs, dtype=np.int8).ravel()
            if s.shape != arr.shape:
                raise ValueError("signs must align with values")
            object.__setattr__(self, "signs", s)

    @classmethod
    def from_raw(cls, id: str, values, origin=None, signs=None) -> "PValuePartition":
        """Clamp into [1e-15, 1 - 1e-15] and build the partition."""
        arr = np.clip(np.asarray(values, dtype=float).ravel(), CLAMP_LO, CLAMP_HI)
        return cls(id, arr, origin, signs)

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class MomentSummary:
    id: str
    n: int
    m1: float
    m2: float
    sums: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("moment summary needs n >= 1")
        if not 0.0 < self.m1 < 1.0:
            raise ValueError(f"m1={self.m1!r} outside (0, 1)")
        if not (self.m2 <= self.m1 and self.m2 >= self.m1 * self.m1 * (1 - 1e-12)):
            raise ValueError(f"infeasible moments m1={self.m1!r}, m2={self.m2!r}")

    def to_dict(self) -> dict:
        d = {"id": self.id, "n": self.n, "m1": self.m1, "m2": self.m2}
        if self.sums:
            d["sums"] = [str(s) for s in self.sums]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MomentSummary":
        return cls(d["id"], int(d["n"]), float(d["m1"]), float(d["m2"]),
                   tuple(int(s) for s in d.get("sums", ())))


@dataclass(frozen=True)
class LPSummary:
    id: str
    n: int
    lp_beta: LPCoefficients
    lp_unif: LPCoefficients
    h_statistic: float
    beta_sums: tuple = field(default=(), compare=False)
    unif_sums: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.lp_beta.m != self.lp_unif.m:
            raise ValueError("beta and uniform coefficient vectors differ in length")
        if not self.lp_unif.is_uniform or self.lp_beta.is_uniform:
            raise ValueError("lp_beta must use the beta basis and lp_unif the uniform basis")

    @property
    def carrier(self) -> BetaParams:
        return self.lp_beta.carrier

    @property
    def m(self) -> int:
        return self.lp_beta.m

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "n": self.n,
            "gamma": self.carrier.gamma,
            "beta": self.carrier.beta,
            "m": self.m,
            "lp_beta": list(self.lp_beta.values),
            "lp_unif": list(self.lp_unif.values),
            "h_statistic": self.h_statistic,
        }
        if self.beta_sums:
            d["beta_sums"] = [str(s) for s in self.beta_sums]
            d["unif_sums"] = [str(s) for s in self.unif_sums]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LPSummary":
        carrier = BetaParams(d["gamma"], d["beta"])
        if len(d["lp_beta"]) != d["m"] or len(d["lp_unif"]) != d["m"]:
            raise ValueError("LP summary: coefficient length does not match m")
        return cls(
            d["id"],
            int(d["n"]),
            LPCoefficients(tuple(d["lp_beta"]), carrier),
            LPCoefficients(tuple(d["lp_unif"])),
            float(d["h_statistic"]),
            tuple(int(s) for s in d.get("beta_sums", ())),
            tuple(int(s) for s in d.get("unif_sums", ())),
        )


def _h(values: Sequence[float]) -> float:
    return math.fsum(v * v for v in values)


# -- round 1 ------------------------------------------------------------------


def summarize_moments(p: PValuePartition) -> MomentSummary:
    u = p.values
    s1, s2 = fixed_sums(np.column_stack([u, u * u]))
    return MomentSummary(p.id, p.n, fixed_mean(s1, p.n), fixed_mean(s2, p.n), (s1, s2))


@dataclass(frozen=True)
class MergedMoments:
    n_total: int
    m1: float
    m2: float

    def fit(self) -> BetaParams:
        return fit_beta_moments(self.m1, self.m2)


def _canonical(summaries: Iterable, kind: str) -> list:
    items = list(summaries)
    if not items:
        raise ProtocolError(f"no {kind} summaries to merge")
    ids = [s.id for s in items]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ProtocolError(f"duplicate partition ids: {dup}")
    return sorted(items, key=lambda s: s.id)


def merge_moments(summaries: Iterable[MomentSummary]) -> MergedMoments:
    """Pooled moments M_j = sum_l (n_l / N) m_j,l, reduced in ascending-id order."""
    items = _canonical(summaries, "moment")
    n_total = sum(s.n for s in items)
    if all(s.sums for s in items):
        s1 = sum(s.sums[0] for s in items)
        s2 = sum(s.sums[1] for s in items)
        return MergedMoments(n_total, fixed_mean(s1, n_total), fixed_mean(s2, n_total))
    m1 = math.fsum(s.n / n_total * s.m1 for s in items)
    m2 = math.fsum(s.n / n_total * s.m2 for s in items)
    return MergedMoments(n_total, m1, m2)


# -- round 2 ------------------------------------------------------------------


def summarize_lp(p: PValuePartition, carrier: BetaParams, m: int = DEFAULT_M) -> LPSummary:
    """Beta-basis and uniform-basis LP coefficients plus the H-statistic.

    ``carrier`` must be the globally broadcast fit.
    """
    bsums = score_sums(p.values, carrier, m)
    usums = score_sums(p.values, None, m)
    lp_beta = LPCoefficients(tuple(fixed_mean(t, p.n) for t in bsums), carrier)
    lp_unif = LPCoefficients(tuple(fixed_mean(t, p.n) for t in usums))
    return LPSummary(p.id, p.n, lp_beta, lp_unif, _h(lp_unif.values), tuple(bsums), tuple(usums))


def _check_lp_compatible(items: Sequence[LPSummary]) -> None:
    carriers = {s.carrier for s in items}
    orders = {s.m for s in items}
    if len(carriers) > 1:
        raise ProtocolError("LP summaries were computed under different carriers")
    if len(orders) > 1:
        raise ProtocolError(f"LP summaries have mixed truncation orders {sorted(orders)}")


def merge_lp(summaries: Iterable[LPSummary], basis: str = "beta") -> LPCoefficients:
    """Full-data LP coefficients as the n_l / N weighted average of local ones.

    ``basis`` selects the beta-basis (``"beta"``) or uniform-basis
    (``"unif"``) vectors.
    """
    if basis not in ("beta", "unif"):
        raise ValueError("basis must be 'beta' or 'unif'")
    items = _canonical(summaries, "LP")
    _check_lp_compatible(items)
    n_total = sum(s.n for s in items)
    carrier = items[0].carrier if basis == "beta" else None
    attr_vals, attr_sums = ("lp_beta", "beta_sums") if basis == "beta" else ("lp_unif", "unif_sums")
    if all(getattr(s, attr_sums) for s in items):
        totals = [sum(col) for col in zip(*(getattr(s, attr_sums) for s in items))]
        return LPCoefficients(tuple(fixed_mean(t, n_total) for t in totals), carrier)
    vals = [
        math.fsum(s.n / n_total * getattr(s, attr_vals).values[j] for s in items)
        for j in range(items[0].m)
    ]
    return LPCoefficients(tuple(vals), carrier)


def combine_lp(summaries: Iterable[LPSummary], id: str) -> LPSummary:
    """Collapse several LP summaries into one, for tree-shaped reductions."""
    items = _canonical(summaries, "LP")
    _check_lp_compatible(items)
    lp_beta = merge_lp(items, "beta")
    lp_unif = merge_lp(items, "unif")
    exact = all(s.beta_sums and s.unif_sums for s in items)
    bsums = tuple(sum(c) for c in zip(*(s.beta_sums for s in items))) if exact else ()
    usums = tuple(sum(c) for c in zip(*(s.unif_sums for s in items))) if exact else ()
    return LPSummary(id, sum(s.n for s in items), lp_beta, lp_unif, _h(lp_unif.values), bsums, usums)


def combine_moments(summaries: Iterable[MomentSummary], id: str) -> MomentSummary:
    items = _canonical(summaries, "moment")
    merged = merge_moments(items)
    sums = ()
    if all(s.sums for s in items):
        sums = (sum(s.sums[0] for s in items), sum(s.sums[1] for s in items))
    return MomentSummary(id, merged.n_total, merged.m1, merged.m2, sums)


def local_model(summary: LPSummary) -> SkewBetaModel:
    """Unselected local comparison density d_l under the broadcast carrier."""
    return SkewBetaModel(summary.carrier, summary.lp_beta.values, summary.n)


def superposition_check(
    locals_: Sequence[tuple[float, SkewBetaModel]],
    global_model: SkewBetaModel,
    grid,
) -> float:
    """max_u |sum_l pi_l d_l(u) - d(u)| over ``grid``, on unrepaired densities."""
    for _, mdl in locals_:
        if mdl.carrier != global_model.carrier:
            raise ProtocolError("local model carrier differs from the global carrier")
    grid = np.asarray(grid, dtype=float)
    total = np.zeros_like(grid)
    for pi, mdl in locals_:
        total += pi * mdl.raw_density(grid)
    return float(np.max(np.abs(total - global_model.raw_density(grid))))


def centralized_oracle(all_values, m: int = DEFAULT_M, eta_override: Optional[float] = None) -> SkewBetaModel:
    """Reference fit on pooled data: moments, carrier, LP, AIC and eta in one place."""
    u = _validated_values(all_values)
    n = u.size
    s1, s2 = fixed_sums(np.column_stack([u, u * u]))
    carrier = fit_beta_moments(fixed_mean(s1, n), fixed_mean(s2, n))
    raw = LPCoefficients(tuple(fixed_mean(t, n) for t in score_sums(u, carrier, m)), carrier)
    return build_model(carrier, raw, n, eta_override)


# -- two-group covariate statistics --------------------------------------------


@dataclass(frozen=True)
class GroupStats:
    """Sufficient statistics of one partition for a two-group comparison.

    ``mean*`` and ``ssq*`` are per-covariate vectors; ``ssq`` is the sum of
    squared deviations about the group mean.
    """

    n0: int
    mean0: np.ndarray
    ssq0: np.ndarray
    n1: int
    mean1: np.ndarray
    ssq1: np.ndarray

    @classmethod
    def from_samples(cls, x0, x1) -> "GroupStats":
        """``x0``/``x1``: arrays of shape (samples, covariates)."""
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        x1 = np.atleast_2d(np.asarray(x1, dtype=float))
        m0 = x0.mean(axis=0) if len(x0) else np.zeros(x0.shape[1])
        m1 = x1.mean(axis=0) if len(x1) else np.zeros(x1.shape[1])
        return cls(len(x0), m0, ((x0 - m0) ** 2).sum(axis=0), len(x1), m1, ((x1 - m1) ** 2).sum(axis=0))


@dataclass(frozen=True)
class PooledGroups:
    mean0: np.ndarray
    var0: np.ndarray
    mean1: np.ndarray
    var1: np.ndarray
    n0: int
    n1: int
    t: np.ndarray
    z: np.ndarray


def _pool(parts: list[tuple[int, np.ndarray, np.ndarray]]):
    total = sum(n for n, _, _ in parts)
    if total == 0:
        raise ValueError("group has zero total count")
    mean = sum((n / total) * mu for n, mu, _ in parts)
    ss = sum(s + n * (mu - mean) ** 2 for n, mu, s in parts if n)
    return total, mean, ss


def merge_group_moments(parts: Sequence[GroupStats]) -> PooledGroups:
    """Pool per-partition group statistics and form two-sample t statistics.

    The t statistic uses the pooled-variance two-sample form with
    n0 + n1 - 2 degrees of freedom; ``z`` maps it to the normal scale through
    its CDF, z = Phi^-1(F_t(t)).
    """
    if not parts:
        raise ValueError("no group statistics to merge")
    dims = {np.shape(p.mean0) for p in parts} | {np.shape(p.mean1) for p in parts}
    if len(dims) != 1:
        raise ValueError("inconsistent covariate dimension across partitions")
    n0, mean0, ss0 = _pool([(p.n0, np.asarray(p.mean0, float), np.asarray(p.ssq0, float)) for p in parts])
    n1, mean1, ss1 = _pool([(p.n1, np.asarray(p.mean1, float), np.asarray(p.ssq1, float)) for p in parts])
    var0 = ss0 / (n0 - 1) if n0 > 1 else np.full_like(mean0, np.nan)
    var1 = ss1 / (n1 - 1) if n1 > 1 else np.full_like(mean1, np.nan)
    df = n0 + n1 - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        sp2 = (ss0 + ss1) / df if df > 0 else np.full_like(mean0, np.nan)
        t = (mean1 - mean0) / np.sqrt(sp2 * (1.0 / n0 + 1.0 / n1))
    if df > 0:
        # upper tail through the survival function to keep precision
        z = np.where(t > 0, -stats.norm.ppf(stats.t.sf(t, df)), stats.norm.ppf(stats.t.cdf(t, df)))
    else:
        z = np.full_like(t, np.nan)
    return PooledGroups(mean0, var0, mean1, var1, n0, n1, t, z)

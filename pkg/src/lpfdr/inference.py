"""Rejection rules driven by a comparison distribution.

Thresholds are computed once on the coordinator from the broadcast model and
then applied inside every partition without further communication.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .lp_model import SkewBetaModel
from .partition_engine import LPSummary, PValuePartition
from .special import EPS

logger = logging.getLogger(__name__)

SMOOTH_BH = "smooth-bh"
CLASSICAL_BH = "classical-bh"
HC = "hc"
LOCAL_FDR = "local-fdr"
WEIGHTED_BH = "weighted-bh"
METHODS = (SMOOTH_BH, CLASSICAL_BH, HC, LOCAL_FDR, WEIGHTED_BH)

SCAN_POINTS = 4096
BISECT_TOL = 1e-10


def _check_levels(alpha: float, eta: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta!r}")


def scan_grid(points: int = SCAN_POINTS) -> np.ndarray:
    """Log-spaced evaluation grid on [1e-12, 1], dense near zero."""
    return np.logspace(math.log10(EPS), 0.0, points)


class EmpiricalCDF:
    """Step comparison distribution of a pooled p-value sample."""

    def __init__(self, values):
        self.sorted = np.sort(np.asarray(values, dtype=float))
        if self.sorted.size == 0:
            raise ValueError("empirical CDF of an empty sample")

    @property
    def n(self) -> int:
        return int(self.sorted.size)

    def cdf(self, u):
        return np.searchsorted(self.sorted, np.asarray(u, dtype=float), side="right") / self.n


def sup_ratio_threshold(
    cdf: Callable[[np.ndarray], np.ndarray],
    level: float,
    grid: Optional[np.ndarray] = None,
    refine: bool = True,
) -> float:
    """sup { u : D(u) / u >= level }, or 0.0 if no grid point qualifies.

    The ratio need not be monotone, so the rightmost qualifying grid point is
    located first and the crossing after it is refined by bisection.
    """
    g = scan_grid() if grid is None else np.asarray(grid, dtype=float)
    ok = np.asarray(cdf(g)) >= level * g
    if not ok.any():
        return 0.0
    i = int(np.flatnonzero(ok)[-1])
    if i == g.size - 1 or not refine:
        return float(g[i])
    lo, hi = float(g[i]), float(g[i + 1])
    while hi - lo > BISECT_TOL * max(lo, EPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(np.asarray(cdf(np.array([mid])))[0]) >= level * mid:
            lo = mid
        else:
            hi = mid
    return lo


def smooth_bh_threshold(model: SkewBetaModel, eta: float, alpha: float) -> float:
    """u_max = sup { u : D(u) / u >= eta / alpha } for the fitted smooth D."""
    _check_levels(alpha, eta)
    return sup_ratio_threshold(model.cdf, eta / alpha)


def folded_cdf(model: SkewBetaModel) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of t = 2 min(u, 1 - u) when u follows the model.

    Lets a model fitted to one-sided u = Phi(z) drive BH on two-sided
    p-values: D2(t) = D(t/2) + 1 - D(1 - t/2).
    """

    def cdf(t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return np.clip(model.cdf(0.5 * t) + 1.0 - model.cdf(1.0 - 0.5 * t), 0.0, 1.0)

    return cdf


def smooth_bh_two_sided(model: SkewBetaModel, eta: float, alpha: float) -> float:
    """Smooth-BH threshold on two-sided p-values from a one-sided model."""
    _check_levels(alpha, eta)
    return sup_ratio_threshold(folded_cdf(model), eta / alpha)


def classical_bh(pooled, eta: float, alpha: float) -> tuple[int, float, np.ndarray]:
    """Step-up BH on pooled p-values, scaled by the null proportion.

    Returns (k, u_(k), boolean rejection mask in input order); k = 0 and
    threshold 0.0 when nothing is rejected.
    """
    _check_levels(alpha, eta)
    u = np.asarray(pooled, dtype=float)
    if u.size == 0:
        raise ValueError("classical BH needs at least one p-value")
    s = np.sort(u)
    i = np.arange(1, u.size + 1)
    # D(u_(i)) / u_(i) >= eta / alpha  <=>  i * alpha >= eta * N * u_(i)
    ok = i * alpha >= eta * u.size * s
    if not ok.any():
        return 0, 0.0, np.zeros(u.size, dtype=bool)
    k = int(np.flatnonzero(ok)[-1]) + 1
    thr = float(s[k - 1])
    return k, thr, u <= thr


@dataclass(frozen=True)
class HCResult:
    k: int
    threshold: float
    statistic: float


def higher_criticism(pooled, alpha0: float = 0.5) -> HCResult:
    """Classical Higher Criticism on pooled p-values (oracle use only).

    Maximizes sqrt(N) (i/N - u_(i)) / sqrt(u_(i)(1 - u_(i))) over
    1 <= i <= alpha0 * N; rejects every p-value <= u_(k).
    """
    if not 0.0 < alpha0 < 1.0:
        raise ValueError(f"alpha0 must lie in (0, 1), got {alpha0!r}")
    s = np.sort(np.asarray(pooled, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("higher criticism needs at least one p-value")
    top = max(1, int(math.floor(alpha0 * n)))
    u = s[:top]
    i = np.arange(1, top + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        hc = math.sqrt(n) * (i / n - u) / np.sqrt(u * (1.0 - u))
    hc = np.where(np.isfinite(hc), hc, -np.inf)
    k = int(np.argmax(hc)) + 1
    return HCResult(k, float(u[k - 1]), float(hc[k - 1]))


def smooth_higher_criticism(model: SkewBetaModel, alpha0: float = 0.5) -> HCResult:
    """Higher Criticism with the smooth D evaluated on the scan grid.

    The window i <= alpha0 * N becomes D(u) <= alpha0.  ``k`` reports the
    implied rejection count N * D(u*), rounded.
    """
    if not 0.0 < alpha0 < 1.0:
        raise ValueError(f"alpha0 must lie in (0, 1), got {alpha0!r}")
    g = scan_grid()[:-1]
    d = model.cdf(g)
    window = d <= alpha0
    if not window.any():
        return HCResult(0, 0.0, float("-inf"))
    g, d = g[window], d[window]
    hc = math.sqrt(model.n_total) * (d - g) / np.sqrt(g * (1.0 - g))
    j = int(np.argmax(hc))
    return HCResult(int(round(model.n_total * d[j])), float(g[j]), float(hc[j]))


def local_fdr_cutoff(eta: float, alpha: float) -> float:
    _check_levels(alpha, eta)
    return eta / (2.0 * alpha)


def local_fdr_reject(model: SkewBetaModel, eta: float, alpha: float, values) -> np.ndarray:
    """Indices i with d(u_i) > eta / (2 alpha), evaluated locally."""
    cut = local_fdr_cutoff(eta, alpha)
    u = np.asarray(values, dtype=float)
    return np.flatnonzero(model.density(u) > cut)


def compute_weights(summaries: Sequence[LPSummary]) -> dict[str, float]:
    """Data-driven weights w_l = H_l / (pi_l sum_k H_k), so sum_l pi_l w_l = 1."""
    items = sorted(summaries, key=lambda s: s.id)
    if not items:
        raise ValueError("no summaries to weight")
    n_total = sum(s.n for s in items)
    h_total = math.fsum(s.h_statistic for s in items)
    if h_total <= 0.0:
        logger.warning("every H-statistic is zero; falling back to unit weights")
        return {s.id: 1.0 for s in items}
    return {s.id: (s.h_statistic / h_total) * (n_total / s.n) for s in items}


def weighted_bh_thresholds(
    model: SkewBetaModel,
    weights: Mapping[str, float],
    eta: float,
    alpha: float,
) -> dict[str, float]:
    """Per-partition u_max,l = sup { u : D(u) / u >= eta / (w_l alpha) }."""
    _check_levels(alpha, eta)
    out: dict[str, float] = {}
    cache: dict[float, float] = {}
    for pid in sorted(weights):
        w = weights[pid]
        if w <= 0.0:
            out[pid] = 0.0
            continue
        if w not in cache:
            cache[w] = sup_ratio_threshold(model.cdf, eta / (w * alpha))
        out[pid] = cache[w]
    return out


# -- decisions ----------------------------------------------------------------


@dataclass(frozen=True)
class PartitionDecision:
    threshold: Optional[float]
    rejected_indices: tuple
    n_left: Optional[int] = None
    n_right: Optional[int] = None

    @property
    def n_rejected(self) -> int:
        return len(self.rejected_indices)

    def to_dict(self) -> dict:
        d = {
            "threshold": self.threshold,
            "rejected_indices": list(self.rejected_indices),
            "n_rejected": self.n_rejected,
        }
        if self.n_left is not None:
            d["n_left"] = self.n_left
            d["n_right"] = self.n_right
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionDecision":
        dec = cls(d["threshold"], tuple(int(i) for i in d["rejected_indices"]), d.get("n_left"), d.get("n_right"))
        if dec.n_rejected != d["n_rejected"]:
            raise ValueError("n_rejected does not match rejected_indices")
        return dec


@dataclass(frozen=True)
class RejectionReport:
    method: str
    alpha: float
    eta_used: float
    per_partition: dict
    global_threshold: Optional[float] = None
    density_cutoff: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def total_rejected(self) -> int:
        return sum(d.n_rejected for d in self.per_partition.values())

    def tail_counts(self) -> Optional[tuple[int, int]]:
        decs = list(self.per_partition.values())
        if not decs or any(d.n_left is None for d in decs):
            return None
        return sum(d.n_left for d in decs), sum(d.n_right for d in decs)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "alpha": self.alpha,
            "eta_used": self.eta_used,
            "global_threshold": self.global_threshold,
            "density_cutoff": self.density_cutoff,
            "total_rejected": self.total_rejected,
            "per_partition": {pid: self.per_partition[pid].to_dict() for pid in sorted(self.per_partition)},
        }
        tails = self.tail_counts()
        if tails is not None:
            d["n_left"], d["n_right"] = tails
        if self.extras:
            d["extras"] = self.extras
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RejectionReport":
        rep = cls(
            d["method"],
            float(d["alpha"]),
            float(d["eta_used"]),
            {pid: PartitionDecision.from_dict(v) for pid, v in d["per_partition"].items()},
            d.get("global_threshold"),
            d.get("density_cutoff"),
            d.get("extras", {}),
        )
        if rep.total_rejected != d["total_rejected"]:
            raise ValueError("total_rejected does not match per-partition counts")
        return rep


def _tails(p: PValuePartition, idx: np.ndarray) -> tuple[Optional[int], Optional[int]]:
    if p.signs is None:
        return None, None
    s = p.signs[idx]
    return int(np.sum(s < 0)), int(np.sum(s > 0))


def decide_partition(p: PValuePartition, broadcast: dict, model: Optional[SkewBetaModel] = None) -> PartitionDecision:
    """Apply a broadcast decision rule to one partition's p-values.

    ``broadcast`` is either ``{"kind": "threshold", "threshold": u}``,
    ``{"kind": "thresholds", "thresholds": {id: u}}`` or
    ``{"kind": "density", "cutoff": c}`` (the last needs ``model``).
    """
    kind = broadcast["kind"]
    if kind == "density":
        if model is None:
            raise ValueError("density rule needs the broadcast model")
        idx = np.flatnonzero(model.density(p.values) > broadcast["cutoff"])
        thr = None
    else:
        thr = broadcast["threshold"] if kind == "threshold" else broadcast["thresholds"][p.id]
        idx = np.flatnonzero(p.values <= thr) if thr > 0.0 else np.array([], dtype=int)
    left, right = _tails(p, idx)
    return PartitionDecision(thr, tuple(int(i) for i in idx), left, right)


def plan_decisions(
    model: SkewBetaModel,
    methods: Sequence[str],
    alpha: float,
    alpha0: float = 0.5,
    eta: Optional[float] = None,
    summaries: Optional[Sequence[LPSummary]] = None,
) -> dict[str, dict]:
    """Coordinator side: turn each requested method into a broadcast rule."""
    eta = model.eta if eta is None else eta
    _check_levels(alpha, eta)
    plans: dict[str, dict] = {}
    for method in methods:
        if method == SMOOTH_BH:
            plans[method] = {"kind": "threshold", "threshold": smooth_bh_threshold(model, eta, alpha)}
        elif method == LOCAL_FDR:
            plans[method] = {"kind": "density", "cutoff": local_fdr_cutoff(eta, alpha)}
        elif method == HC:
            res = smooth_higher_criticism(model, alpha0)
            plans[method] = {"kind": "threshold", "threshold": res.threshold,
                             "statistic": res.statistic}
        elif method == WEIGHTED_BH:
            if summaries is None:
                raise ValueError("weighted BH needs the LP summaries")
            w = compute_weights(summaries)
            plans[method] = {"kind": "thresholds",
                             "thresholds": weighted_bh_thresholds(model, w, eta, alpha),
                             "weights": w}
        else:
            raise ValueError(f"method {method!r} is not available in distributed mode")
    return plans


def build_report(method: str, plan: dict, decisions: Mapping[str, PartitionDecision], alpha: float, eta: float) -> RejectionReport:
    extras = {}
    if "weights" in plan:
        extras["weights"] = {k: plan["weights"][k] for k in sorted(plan["weights"])}
    if "statistic" in plan and math.isfinite(plan["statistic"]):
        extras["hc_statistic"] = plan["statistic"]
    return RejectionReport(
        method,
        alpha,
        eta,
        dict(decisions),
        plan.get("threshold"),
        plan.get("cutoff"),
        extras,
    )


def weighted_bh(
    model: SkewBetaModel,
    summaries: Sequence[LPSummary],
    partitions: Sequence[PValuePartition],
    eta: float,
    alpha: float,
    weights: Optional[Mapping[str, float]] = None,
) -> RejectionReport:
    """Weighted smooth BH with per-partition thresholds, as a full report."""
    w = compute_weights(summaries) if weights is None else dict(weights)
    plan = {"kind": "thresholds", "thresholds": weighted_bh_thresholds(model, w, eta, alpha), "weights": w}
    decisions = {p.id: decide_partition(p, plan) for p in partitions}
    return build_report(WEIGHTED_BH, plan, decisions, alpha, eta)

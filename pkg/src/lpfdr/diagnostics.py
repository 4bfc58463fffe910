"""Heterogeneity diagnostics: H-chart, L-matrix, and the information map.

The L-matrix stacks each partition's uniform-basis LP coefficients as a row.
Its top two singular directions place every partition on a 2-D map where the
distance from the origin reflects how much signal the partition carries.
"""

from __future__ import annotations

import csv
import html
import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .partition_engine import LPSummary, ProtocolError
from .special import legendre_basis


@dataclass(frozen=True)
class LMatrix:
    row_ids: tuple
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != len(self.row_ids):
            raise ValueError("L-matrix shape does not match its row ids")
        if not np.all(np.isfinite(e)):
            raise ValueError("L-matrix entries must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class InfoMapPoint:
    id: str
    x: float
    y: float


def build_l_matrix(summaries: Sequence[LPSummary]) -> LMatrix:
    items = sorted(summaries, key=lambda s: s.id)
    if not items:
        raise ValueError("no summaries")
    if len({s.m for s in items}) > 1:
        raise ProtocolError("summaries have mixed truncation orders")
    return LMatrix(tuple(s.id for s in items), np.array([s.lp_unif.values for s in items]))


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.

    Returns (eigenvalues descending, eigenvectors as columns).
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("jacobi_eigh needs a square matrix")
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _positive_major(vec: np.ndarray) -> float:
    """+1 or -1 so that the largest-magnitude entry becomes positive."""
    if not np.any(vec):
        return 1.0
    i = int(np.argmax(np.abs(vec)))
    return -1.0 if vec[i] < 0 else 1.0


class SVDResult(NamedTuple):
    singular_values: np.ndarray  # all m values, descending
    left: np.ndarray  # K x 2 left singular vectors (zero columns when lambda = 0)
    right: np.ndarray  # m x 2 right singular vectors

    @property
    def lambda1(self) -> float:
        return float(self.singular_values[0])

    @property
    def lambda2(self) -> float:
        return float(self.singular_values[1]) if self.singular_values.size > 1 else 0.0


def svd_top2(L) -> SVDResult:
    """Top-two singular triplets of a K x m matrix via Jacobi on L^T L.

    Sign convention: each left singular vector has its largest-magnitude
    component positive (right vectors follow); ties go to the first index.
    """
    a = np.asarray(L.entries if isinstance(L, LMatrix) else L, dtype=float)
    k, m = a.shape
    evals, evecs = jacobi_eigh(a.T @ a)
    sv = np.sqrt(np.clip(evals, 0.0, None))
    left = np.zeros((k, 2))
    right = np.zeros((m, 2))
    tiny = sv[0] * 1e-13 if sv.size else 0.0
    for j in range(min(2, m)):
        v = evecs[:, j]
        if sv[j] > tiny and sv[j] > 0.0:
            u = a @ v / sv[j]
            sgn = _positive_major(u)
            left[:, j] = sgn * u
            right[:, j] = sgn * v
        else:
            sv[j] = 0.0
    for j in range(2, sv.size):
        if sv[j] <= tiny:
            sv[j] = 0.0
    return SVDResult(sv, left, right)


def information_map(L: LMatrix) -> list[InfoMapPoint]:
    """Points (lambda_1 u_i1, lambda_2 u_i2), one per partition."""
    res = svd_top2(L)
    xs = res.lambda1 * res.left[:, 0]
    ys = res.lambda2 * res.left[:, 1]
    return [InfoMapPoint(pid, float(x), float(y)) for pid, x, y in zip(L.row_ids, xs, ys)]


def h_chart(summaries: Sequence[LPSummary]) -> list[tuple[str, float]]:
    return [(s.id, s.h_statistic) for s in sorted(summaries, key=lambda s: s.id)]


def null_h_quantile(n: int, m: int, q: float = 0.999, reps: int = 2000, seed: int = 0) -> float:
    """Monte-Carlo q-quantile of H for n uniform p-values at order m."""
    rng = np.random.default_rng(seed)
    h = np.empty(reps)
    for r in range(reps):
        lp = legendre_basis(rng.random(n), m).mean(axis=0)
        h[r] = float(lp @ lp)
    return float(np.quantile(h, q))


# -- emitters -----------------------------------------------------------------


def hchart_csv(chart: Sequence[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "H"])
    for pid, h in chart:
        w.writerow([pid, repr(float(h))])
    return buf.getvalue()


def infomap_csv(points: Sequence[InfoMapPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "x", "y"])
    for p in points:
        w.writerow([p.id, repr(p.x), repr(p.y)])
    return buf.getvalue()


def scatter_svg(
    xs: Sequence[float],
    ys: Sequence[float],
    title: str,
    labels: Optional[Sequence[str]] = None,
    hline: Optional[float] = None,
    width: int = 640,
    height: int = 400,
) -> str:
    """Self-contained SVG scatter plot; no external assets."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    pad = 48
    allx = xs if xs.size else np.array([0.0])
    ally = np.concatenate([ys, [hline]]) if hline is not None else (ys if ys.size else np.array([0.0]))
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(min(ally.min(), 0.0)), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{html.escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 16}" font-family="sans-serif" font-size="10">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-family="sans-serif" font-size="10">{x1:.3g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-family="sans-serif" font-size="10">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{y1:.3g}</text>',
    ]
    if hline is not None:
        out.append(
            f'<line x1="{pad}" y1="{sy(hline):.2f}" x2="{width - pad}" y2="{sy(hline):.2f}" '
            'stroke="red" stroke-dasharray="4 3"/>'
        )
    for i, (x, y) in enumerate(zip(xs, ys)):
        tip = f"<title>{html.escape(str(labels[i]))}</title>" if labels is not None else ""
        out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="steelblue">{tip}</circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


"""Exact, order-independent accumulation of float scores.

Every value is rounded once onto a fixed-point grid of spacing 2**-96 and the
grid integers are summed with Python ints.  Integer addition is associative,
so per-partition totals merge into exactly the total a single pass over the
pooled data would produce, whatever the partitioning.  The rounding step is
far below double precision for the magnitudes used here (|x| < 64).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

FRAC_BITS = 96
_LIMB = 32
_MAX_ABS = 64.0
_CHUNK = 1 << 22


def fixed_sums(x: np.ndarray) -> list[int]:
    """Column sums of ``x`` (shape (n,) or (n, m)) as exact grid integers."""
    arr = np.asarray(x, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot accumulate non-finite values")
    if arr.size and np.max(np.abs(arr)) >= _MAX_ABS:
        raise ValueError(f"accumulated values must satisfy |x| < {_MAX_ABS}")
    totals = [0] * arr.shape[1]
    for start in range(0, arr.shape[0], _CHUNK):
        q = np.ldexp(arr[start:start + _CHUNK], FRAC_BITS)
        # split q = a*2^64 + b*2^32 + c; each subtraction below is exact
        a = np.trunc(np.ldexp(q, -2 * _LIMB))
        q = q - np.ldexp(a, 2 * _LIMB)
        b = np.trunc(np.ldexp(q, -_LIMB))
        c = np.rint(q - np.ldexp(b, _LIMB))
        sa = a.astype(np.int64).sum(axis=0)
        sb = b.astype(np.int64).sum(axis=0)
        sc = c.astype(np.int64).sum(axis=0)
        for k in range(arr.shape[1]):
            totals[k] += (int(sa[k]) << (2 * _LIMB)) + (int(sb[k]) << _LIMB) + int(sc[k])
    return totals[0:1] if squeeze else totals


def fixed_mean(total: int, n: int) -> float:
    """Correctly rounded float of ``total * 2**-96 / n``."""
    if n <= 0:
        raise ValueError("mean of an empty collection")
    return float(Fraction(total, n << FRAC_BITS))

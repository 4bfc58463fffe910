"""Seeded data generators and partition writers.

Files written here hold z-values (or raw p-values for beta alternatives) and
come with a manifest naming the p-value kind, plus a ``truth.json`` listing
the signal positions in each partition.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .io import RAW, RIGHT, ManifestEntry, atomic_write, to_pvalues, write_manifest, write_numbers

EXAMPLE2_K = 200
EXAMPLE2_NULLS = 9800
EXAMPLE2_SIGNALS = 25


@dataclass(frozen=True)
class SimPartition:
    id: str
    values: np.ndarray  # z-values, or p-values when kind == "raw"
    is_signal: np.ndarray
    kind: str

    def pvalues(self) -> tuple[np.ndarray, Optional[np.ndarray]]:
        return to_pvalues(self.values, self.kind)


def _pid(i: int, k: int) -> str:
    return f"part-{i:0{max(3, len(str(k)))}d}"


def example2(seed: int, kind: str = RIGHT) -> list[SimPartition]:
    """9800 N(0,1) nulls over 200 partitions; partitions 1-4 get 25 extra
    N(2,1) values, partitions 5-8 get 25 extra U(2,4) values."""
    rng = np.random.default_rng(seed)
    nulls = rng.standard_normal(EXAMPLE2_NULLS).reshape(EXAMPLE2_K, -1)
    out = []
    for i in range(EXAMPLE2_K):
        z = nulls[i]
        sig = np.zeros(z.size, dtype=bool)
        if i < 4:
            extra = rng.normal(2.0, 1.0, EXAMPLE2_SIGNALS)
        elif i < 8:
            extra = rng.uniform(2.0, 4.0, EXAMPLE2_SIGNALS)
        else:
            extra = None
        if extra is not None:
            z = np.concatenate([z, extra])
            sig = np.concatenate([sig, np.ones(EXAMPLE2_SIGNALS, dtype=bool)])
        out.append(SimPartition(_pid(i + 1, EXAMPLE2_K), z, sig, kind))
    return out


_ALT_RE = re.compile(r"^(beta):([0-9.eE+-]+),([0-9.eE+-]+)$|^(normal):([0-9.eE+-]+)$")


def parse_alternative(spec: str) -> tuple:
    """'beta:a,b' or 'normal:mu' -> ('beta', a, b) / ('normal', mu)."""
    m = _ALT_RE.match(spec.strip())
    if not m:
        raise ValueError(f"alternative must look like 'beta:a,b' or 'normal:mu', got {spec!r}")
    if m.group(1):
        a, b = float(m.group(2)), float(m.group(3))
        if a <= 0 or b <= 0:
            raise ValueError("beta alternative needs positive shapes")
        return ("beta", a, b)
    return ("normal", float(m.group(5)))


def mixture(
    n: int,
    eta: float,
    alternative: tuple,
    k: int = 1,
    seed: int = 0,
    kind: str = RIGHT,
) -> list[SimPartition]:
    """Two-group mixture F = eta F0 + (1 - eta) H split into ``k`` partitions.

    Beta alternatives produce raw p-values (nulls uniform); normal-shift
    alternatives produce z-values (nulls standard normal) read with ``kind``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if n < 1 or k < 1 or k > n:
        raise ValueError("need n >= k >= 1")
    rng = np.random.default_rng(seed)
    is_signal = rng.random(n) >= eta
    n_sig = int(is_signal.sum())
    if alternative[0] == "beta":
        x = rng.random(n)
        x[is_signal] = rng.beta(alternative[1], alternative[2], n_sig)
        kind = RAW
    elif alternative[0] == "normal":
        x = rng.standard_normal(n)
        x[is_signal] += alternative[1]
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    out = []
    for i, (xs, ss) in enumerate(zip(np.array_split(x, k), np.array_split(is_signal, k))):
        out.append(SimPartition(_pid(i + 1, k), xs, ss, kind))
    return out


def example1_partition(z: np.ndarray, seed: int = 0, k: int = 200, tail_frac: float = 0.01) -> list[SimPartition]:
    """Stress-test layout: lowest and highest 1% of z split into three blocks
    each, appended to the first and last three of ``k`` shuffled partitions.

    Sorting the pooled values is a centralized act; this builds test data
    only and is not part of the distributed protocol.
    """
    z = np.asarray(z, dtype=float)
    rng = np.random.default_rng(seed)
    order = np.argsort(z, kind="stable")
    t = int(round(tail_frac * z.size))
    low, high, mid = order[:t], order[z.size - t:], order[t:z.size - t]
    low_blocks = np.array_split(rng.permutation(low), 3)
    high_blocks = np.array_split(rng.permutation(high), 3)
    bins = np.array_split(rng.permutation(mid), k)
    for j in range(3):
        bins[j] = np.concatenate([bins[j], low_blocks[j]])
        bins[k - 3 + j] = np.concatenate([bins[k - 3 + j], high_blocks[j]])
    flag = np.zeros(z.size, dtype=bool)
    flag[low] = flag[high] = True
    return [SimPartition(_pid(i + 1, k), z[b], flag[b], "left-from-z") for i, b in enumerate(bins)]


def write_partitions(parts: Sequence[SimPartition], out_dir, kind: Optional[str] = None) -> Path:
    """Write one file per partition, ``manifest.json`` and ``truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    truth = {}
    for p in parts:
        path = out / f"{p.id}.csv"
        write_numbers(path, p.values)
        entries.append(ManifestEntry(str(path), kind or p.kind))
        truth[p.id] = [int(i) for i in np.flatnonzero(p.is_signal)]
    manifest = out / "manifest.json"
    write_manifest(manifest, entries)
    atomic_write(out / "truth.json", json.dumps(truth, sort_keys=True) + "\n")
    return manifest

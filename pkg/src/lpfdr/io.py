"""Partition files and manifests.

A partition file holds one number per line; blank lines and lines starting
with ``#`` are skipped.  A manifest is a JSON list of ``{"path", "kind"}``
objects, with relative paths resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .partition_engine import PValuePartition

RAW = "raw"
TWO_SIDED = "two-sided-from-z"
LEFT = "left-from-z"
RIGHT = "right-from-z"
PVALUE_KINDS = (RAW, TWO_SIDED, LEFT, RIGHT)


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    kind: str = RAW

    def __post_init__(self):
        if self.kind not in PVALUE_KINDS:
            raise ValueError(f"unknown p-value kind {self.kind!r}; expected one of {PVALUE_KINDS}")


def read_numbers(path) -> np.ndarray:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            text = text.split(",")[0].strip()
            try:
                out.append(float(text))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not a number: {text!r}") from None
    return np.asarray(out, dtype=float)


def to_pvalues(x: np.ndarray, kind: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Map raw numbers to p-values; z kinds also return the z signs."""
    if kind == RAW:
        bad = np.flatnonzero(~((x >= 0.0) & (x <= 1.0)))
        if bad.size:
            raise ValueError(f"raw p-value at index {int(bad[0])} is {x[bad[0]]!r}, outside [0, 1]")
        return x, None
    if not np.all(np.isfinite(x)):
        raise ValueError("z-values must be finite")
    signs = np.sign(x).astype(np.int8)
    if kind == TWO_SIDED:
        return 2.0 * ndtr(-np.abs(x)), signs
    if kind == LEFT:
        return ndtr(x), signs
    if kind == RIGHT:
        return ndtr(-x), signs
    raise ValueError(f"unknown p-value kind {kind!r}")


def ingest_partition(path, kind: str = RAW) -> PValuePartition:
    """Read one partition file; the partition id is the file stem."""
    p = Path(path)
    if kind not in PVALUE_KINDS:
        raise ValueError(f"unknown p-value kind {kind!r}")
    x = read_numbers(p)
    try:
        u, signs = to_pvalues(x, kind)
    except ValueError as exc:
        raise ValueError(f"{p}: {exc}") from None
    return PValuePartition.from_raw(p.stem, u, str(p), signs)


def read_manifest(path) -> list[ManifestEntry]:
    base = Path(path).resolve().parent
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ParseError(f"{path}: manifest must be a JSON list")
    entries = []
    for i, item in enumerate(data):
        if isinstance(item, str):
            item = {"path": item}
        if "path" not in item:
            raise ParseError(f"{path}: entry {i} has no 'path'")
        p = Path(item["path"])
        if not p.is_absolute():
            p = base / p
        entries.append(ManifestEntry(str(p), item.get("kind", RAW)))
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    base = Path(path).resolve().parent
    rows = []
    for e in entries:
        p = Path(e.path).resolve()
        rel = os.path.relpath(p, base)
        rows.append({"path": rel, "kind": e.kind})
    atomic_write(path, json.dumps(rows, indent=1) + "\n")


def write_numbers(path, values: Iterable[float]) -> None:
    atomic_write(path, "".join(f"{float(v)!r}\n" for v in values))


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

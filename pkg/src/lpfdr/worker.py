"""Worker side of the two-round protocol.

A worker owns a set of partition files and answers coordinator messages with
fixed-size summaries.  Raw p-values never leave the worker.  Run as
``lpfdr summarize --serve`` (or ``python -m lpfdr summarize --serve``) to speak the
protocol over stdin/stdout.
"""

from __future__ import annotations

import sys
from typing import IO, Iterable

from . import wire
from .inference import decide_partition
from .io import ManifestEntry, ingest_partition
from .lp_model import SkewBetaModel
from .partition_engine import PValuePartition, summarize_lp, summarize_moments
from .special import BetaParams


class WorkerState:
    def __init__(self):
        self.partitions: dict[str, PValuePartition] = {}

    def load(self, entries: Iterable[ManifestEntry]) -> None:
        for e in entries:
            p = ingest_partition(e.path, e.kind)
            if p.id in self.partitions:
                raise wire.WireError(f"partition id {p.id!r} assigned twice")
            self.partitions[p.id] = p

    def _ordered(self) -> list[PValuePartition]:
        return [self.partitions[k] for k in sorted(self.partitions)]

    def handle(self, msg: dict) -> list[str]:
        kind, payload = msg["type"], msg["payload"]
        if kind == "assign":
            self.load(ManifestEntry(d["path"], d.get("kind", "raw")) for d in payload["partitions"])
            return [wire.encode("done", {"count": len(self.partitions)}, 1)]
        if kind == "moments_request":
            out = [wire.encode("moment_summary", summarize_moments(p).to_dict()) for p in self._ordered()]
            return out + [wire.encode("done", {"count": len(out)}, 1)]
        if kind == "carrier":
            carrier = BetaParams(payload["gamma"], payload["beta"])
            m = int(payload["m"])
            out = [wire.encode("lp_summary", summarize_lp(p, carrier, m).to_dict()) for p in self._ordered()]
            return out + [wire.encode("done", {"count": len(out)}, 2)]
        if kind == "threshold":
            model = SkewBetaModel.from_dict(payload["model"]) if payload.get("model") else None
            method, rule = payload["method"], payload["rule"]
            out = []
            for p in self._ordered():
                dec = decide_partition(p, rule, model)
                out.append(wire.encode("decision", {"method": method, "id": p.id, "decision": dec.to_dict()}))
            return out + [wire.encode("done", {"count": len(out)}, 2)]
        raise wire.WireError(f"unexpected message type {kind!r}")


def serve(stdin: IO[str], stdout: IO[str]) -> int:
    state = WorkerState()
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = wire.decode(line)
            if msg["type"] == "shutdown":
                return 0
            replies = state.handle(msg)
        except Exception as exc:  # reported to the coordinator, which aborts the run
            replies = [wire.encode("error", {"message": f"{type(exc).__name__}: {exc}"})]
        stdout.write("".join(replies))
        stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(serve(sys.stdin, sys.stdout))

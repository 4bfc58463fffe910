"""Coordinator: runs the two-round protocol end to end and writes artifacts.

Round 1 gathers moment summaries and fits the beta carrier; round 2 gathers
LP summaries under the broadcast carrier, builds the model and broadcasts
decision rules.  The same :class:`~lpfdr.worker.WorkerState` handler serves
both execution modes; ``inprocess`` calls it on threads, ``workers`` talks to
spawned processes over stdio.  Both exchange the same encoded wire lines, so
their outputs are byte-identical.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from . import wire
from .diagnostics import (
    InfoMapPoint,
    build_l_matrix,
    h_chart,
    hchart_csv,
    information_map,
    infomap_csv,
    null_h_quantile,
    scatter_svg,
    svd_top2,
)
from .inference import (
    HC,
    LOCAL_FDR,
    METHODS,
    SMOOTH_BH,
    WEIGHTED_BH,
    PartitionDecision,
    RejectionReport,
    build_report,
    compute_weights,
    plan_decisions,
)
from .io import PVALUE_KINDS, RAW, ManifestEntry, read_manifest
from .lp_model import DEFAULT_M, MAX_M, SkewBetaModel, build_model
from .partition_engine import LPSummary, MomentSummary, merge_lp, merge_moments
from .worker import WorkerState

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DEFAULT_METHODS = (SMOOTH_BH, LOCAL_FDR)
DISTRIBUTED_METHODS = (SMOOTH_BH, LOCAL_FDR, HC, WEIGHTED_BH)
H_REFERENCE_QUANTILE = 0.999


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class RunConfig:
    input: list = field(default_factory=list)
    manifest: Optional[str] = None
    m: int = DEFAULT_M
    alpha: float = 0.1
    alpha0: float = 0.5
    eta: Optional[float] = None
    methods: tuple = DEFAULT_METHODS
    mode: str = "inprocess"
    seed: Optional[int] = None
    output_dir: Optional[str] = None
    pvalue_kind: str = RAW
    workers: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.alpha0 < 1.0:
            raise ValueError(f"alpha0 must lie in (0, 1), got {self.alpha0}")
        if not 1 <= self.m <= MAX_M:
            raise ValueError(f"m must lie in [1, {MAX_M}], got {self.m}")
        if self.eta is not None and not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        self.methods = tuple(self.methods)
        bad = [mth for mth in self.methods if mth not in DISTRIBUTED_METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {DISTRIBUTED_METHODS}, got {bad}")
        if self.mode not in ("inprocess", "workers"):
            raise ValueError(f"mode must be 'inprocess' or 'workers', got {self.mode!r}")
        if self.pvalue_kind not in PVALUE_KINDS:
            raise ValueError(f"pvalue_kind must be one of {PVALUE_KINDS}")

    def entries(self) -> list[ManifestEntry]:
        out = read_manifest(self.manifest) if self.manifest else []
        out += [ManifestEntry(str(p), self.pvalue_kind) for p in self.input]
        if not out:
            raise ValueError("no input partitions given")
        return out

    def public(self) -> dict:
        """Config fields that affect results (mode and paths excluded)."""
        return {
            "m": self.m,
            "alpha": self.alpha,
            "alpha0": self.alpha0,
            "eta": self.eta,
            "methods": list(self.methods),
        }


def pool_size(requested: Optional[int] = None) -> int:
    if requested:
        return max(1, int(requested))
    env = os.environ.get("LPFDR_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


# -- transports ---------------------------------------------------------------


class _Transport:
    """Sends one message to every slot and collects the decoded replies."""

    def __init__(self):
        self.traffic: list[tuple[str, int]] = []

    def _collect(self, lines: Sequence[str]) -> list[dict]:
        out = []
        for line in lines:
            msg = wire.decode(line)
            if msg["type"] == "error":
                raise wire.WireError(msg["payload"]["message"])
            self.traffic.append((msg["type"], len(line.encode("utf-8"))))
            if msg["type"] != "done":
                out.append(msg)
        return out

    def broadcast(self, line_for_slot) -> list[dict]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(_Transport):
    def __init__(self, slots: int):
        super().__init__()
        self.states = [WorkerState() for _ in range(slots)]
        self.pool = ThreadPoolExecutor(max_workers=slots)

    def broadcast(self, line_for_slot) -> list[dict]:
        def run(i):
            msg = wire.decode(line_for_slot(i))
            try:
                return self.states[i].handle(msg)
            except Exception as exc:
                return [wire.encode("error", {"message": f"{type(exc).__name__}: {exc}"})]

        replies = list(self.pool.map(run, range(len(self.states))))
        return self._collect([line for batch in replies for line in batch])

    def close(self) -> None:
        self.pool.shutdown()


class SubprocessTransport(_Transport):
    def __init__(self, slots: int):
        super().__init__()
        env = dict(os.environ)
        src = str(Path(__file__).resolve().parent.parent)
        env["PYTHONPATH"] = src + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
        self.procs = [
            subprocess.Popen(
                [sys.executable, "-m", "lpfdr", "summarize", "--serve"],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                env=env,
            )
            for _ in range(slots)
        ]

    def broadcast(self, line_for_slot) -> list[dict]:
        for i, proc in enumerate(self.procs):
            proc.stdin.write(line_for_slot(i))
            proc.stdin.flush()
        lines = []
        for proc in self.procs:
            while True:
                line = proc.stdout.readline()
                if not line:
                    raise wire.WireError(f"worker {proc.pid} exited unexpectedly")
                lines.append(line)
                kind = wire.decode(line)["type"]
                if kind in ("done", "error"):
                    break
        return self._collect(lines)

    def close(self) -> None:
        for proc in self.procs:
            try:
                if proc.poll() is None:
                    proc.stdin.write(wire.encode("shutdown", {}))
                    proc.stdin.flush()
                    proc.stdin.close()
                proc.wait(timeout=10)
            except Exception:
                proc.kill()


# -- pipeline -----------------------------------------------------------------


@dataclass
class PipelineResult:
    config: RunConfig
    model: SkewBetaModel
    eta_source: str
    moment_summaries: list
    lp_summaries: list
    reports: dict
    diagnostics: dict
    traffic: list

    def model_json(self) -> str:
        return json.dumps(self.model.to_dict(), indent=2, sort_keys=True) + "\n"

    def summaries_jsonl(self) -> str:
        lines = [wire.encode("moment_summary", s.to_dict()) for s in self.moment_summaries]
        lines += [wire.encode("lp_summary", s.to_dict()) for s in self.lp_summaries]
        return "".join(lines)

    def report_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n_total": self.model.n_total,
            "n_partitions": len(self.lp_summaries),
            "m": self.model.m,
            "carrier": {"gamma": self.model.carrier.gamma, "beta": self.model.carrier.beta},
            "eta_used": self.model.eta,
            "eta_source": self.eta_source,
            "config": self.config.public(),
            "methods": {k: self.reports[k].to_dict() for k in sorted(self.reports)},
            "diagnostics": self.diagnostics,
        }

    def report_json(self) -> str:
        return json.dumps(self.report_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _assign(entries: Sequence[ManifestEntry], slots: int) -> list[list[ManifestEntry]]:
    ordered = sorted(entries, key=lambda e: (Path(e.path).stem, e.path))
    groups: list[list[ManifestEntry]] = [[] for _ in range(slots)]
    for i, e in enumerate(ordered):
        groups[i % slots].append(e)
    return groups


def _diagnostics(summaries: Sequence[LPSummary], seed: int = 0) -> dict:
    chart = h_chart(summaries)
    lmat = build_l_matrix(summaries)
    svd = svd_top2(lmat)
    points = information_map(lmat)
    sizes = sorted(s.n for s in summaries)
    n_ref = sizes[len(sizes) // 2]
    m = summaries[0].m
    if n_ref * 1000 <= 10_000_000:
        ref = null_h_quantile(n_ref, m, H_REFERENCE_QUANTILE, reps=1000, seed=seed)
    else:
        from scipy.stats import chi2

        # n H is asymptotically chi-square with m degrees of freedom under the null
        ref = float(chi2.ppf(H_REFERENCE_QUANTILE, m) / n_ref)
    return {
        "h_chart": [{"id": pid, "H": h} for pid, h in chart],
        "h_reference": {"quantile": H_REFERENCE_QUANTILE, "n": n_ref, "value": ref},
        "weights": compute_weights(summaries),
        "singular_values": [float(v) for v in svd.singular_values],
        "info_map": [{"id": p.id, "x": p.x, "y": p.y} for p in points],
    }


def run_pipeline(config: RunConfig, emit: bool = True) -> PipelineResult:
    """Run the full protocol; write artifacts to ``config.output_dir`` if set."""
    stage = "ingest"
    transport: Optional[_Transport] = None
    if emit and config.output_dir:
        stale = Path(config.output_dir) / "report.json"
        if stale.exists():
            stale.unlink()
    try:
        entries = config.entries()
        slots = min(len(entries), pool_size(config.workers))
        transport = SubprocessTransport(slots) if config.mode == "workers" else InProcessTransport(slots)
        groups = _assign(entries, slots)

        stage = "assign"
        transport.broadcast(lambda i: wire.encode(
            "assign", {"partitions": [{"path": e.path, "kind": e.kind} for e in groups[i]]}))

        stage = "round1"
        replies = transport.broadcast(lambda i: wire.encode("moments_request", {}))
        moments = sorted((MomentSummary.from_dict(r["payload"]) for r in replies), key=lambda s: s.id)
        merged = merge_moments(moments)
        carrier = merged.fit()
        logger.info("round 1: N=%d, carrier gamma=%.6g beta=%.6g", merged.n_total, carrier.gamma, carrier.beta)

        stage = "round2"
        bc = {"gamma": carrier.gamma, "beta": carrier.beta, "m": config.m}
        replies = transport.broadcast(lambda i: wire.encode("carrier", bc))
        lp = sorted((LPSummary.from_dict(r["payload"]) for r in replies), key=lambda s: s.id)
        model = build_model(carrier, merge_lp(lp, "beta"), merged.n_total, config.eta)
        eta_source = "estimated" if config.eta is None else "override"

        stage = "decide"
        plans = plan_decisions(model, config.methods, config.alpha, config.alpha0, model.eta, lp)
        reports = {}
        for method in config.methods:
            rule = {k: v for k, v in plans[method].items() if k in ("kind", "threshold", "thresholds", "cutoff")}
            payload = {"method": method, "rule": rule,
                       "model": model.to_dict() if rule["kind"] == "density" else None}
            replies = transport.broadcast(lambda i: wire.encode("threshold", payload))
            decisions = {r["payload"]["id"]: PartitionDecision.from_dict(r["payload"]["decision"]) for r in replies}
            reports[method] = build_report(method, plans[method], decisions, config.alpha, model.eta)

        stage = "diagnostics"
        diag = _diagnostics(lp, 0 if config.seed is None else config.seed)
        result = PipelineResult(config, model, eta_source, moments, lp, reports, diag, list(transport.traffic))
    except Exception as exc:
        raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc
    finally:
        if transport is not None:
            transport.close()

    if emit and config.output_dir:
        try:
            emit_report(result, config.output_dir)
        except Exception as exc:
            raise PipelineError("emit", f"{type(exc).__name__}: {exc}") from exc
    return result


def emit_report(result: PipelineResult, output_dir) -> list[Path]:
    """Write all artifacts via a staging directory; report.json lands last."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=out, prefix=".staging-"))
    try:
        diag = result.diagnostics
        files = {
            "model.json": result.model_json(),
            "summaries.jsonl": result.summaries_jsonl(),
            "hchart.csv": hchart_csv([(r["id"], r["H"]) for r in diag["h_chart"]]),
            "infomap.csv": infomap_csv([InfoMapPoint(p["id"], p["x"], p["y"]) for p in diag["info_map"]]),
            "hchart.svg": scatter_svg(
                list(range(1, len(diag["h_chart"]) + 1)),
                [r["H"] for r in diag["h_chart"]],
                "Control H-chart",
                labels=[r["id"] for r in diag["h_chart"]],
                hline=diag["h_reference"]["value"],
            ),
            "infomap.svg": scatter_svg(
                [p["x"] for p in diag["info_map"]],
                [p["y"] for p in diag["info_map"]],
                "Information map",
                labels=[p["id"] for p in diag["info_map"]],
            ),
            "report.json": result.report_json(),
        }
        for name, text in files.items():
            with open(staging / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        written = []
        for name in files:
            if name != "report.json":
                os.replace(staging / name, out / name)
                written.append(out / name)
        os.replace(staging / "report.json", out / "report.json")
        written.append(out / "report.json")
        return written
    finally:
        shutil.rmtree(staging, ignore_errors=True)


# -- report schema ------------------------------------------------------------

_DECISION_SCHEMA = {
    "type": "object",
    "required": ["threshold", "rejected_indices", "n_rejected"],
    "properties": {
        "threshold": {"type": ["number", "null"]},
        "rejected_indices": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "n_rejected": {"type": "integer", "minimum": 0},
        "n_left": {"type": "integer", "minimum": 0},
        "n_right": {"type": "integer", "minimum": 0},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "n_total", "n_partitions", "m", "carrier", "eta_used",
                 "eta_source", "config", "methods", "diagnostics"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "n_total": {"type": "integer", "minimum": 1},
        "n_partitions": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1, "maximum": MAX_M},
        "carrier": {
            "type": "object",
            "required": ["gamma", "beta"],
            "properties": {"gamma": {"type": "number", "exclusiveMinimum": 0},
                           "beta": {"type": "number", "exclusiveMinimum": 0}},
        },
        "eta_used": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "eta_source": {"enum": ["estimated", "override"]},
        "config": {"type": "object"},
        "methods": {
            "type": "object",
            "propertyNames": {"enum": list(METHODS)},
            "additionalProperties": {
                "type": "object",
                "required": ["method", "alpha", "eta_used", "total_rejected", "per_partition"],
                "properties": {
                    "method": {"enum": list(METHODS)},
                    "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "eta_used": {"type": "number"},
                    "global_threshold": {"type": ["number", "null"]},
                    "density_cutoff": {"type": ["number", "null"]},
                    "total_rejected": {"type": "integer", "minimum": 0},
                    "per_partition": {"type": "object", "additionalProperties": _DECISION_SCHEMA},
                },
            },
        },
        "diagnostics": {
            "type": "object",
            "required": ["h_chart", "weights", "info_map"],
            "properties": {
                "h_chart": {"type": "array", "items": {
                    "type": "object", "required": ["id", "H"],
                    "properties": {"id": {"type": "string"}, "H": {"type": "number", "minimum": 0}}}},
                "weights": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
                "info_map": {"type": "array", "items": {
                    "type": "object", "required": ["id", "x", "y"],
                    "properties": {"id": {"type": "string"}, "x": {"type": "number"}, "y": {"type": "number"}}}},
            },
        },
    },
}


@dataclass
class ReportFile:
    raw: dict
    reports: dict

    def to_json(self) -> str:
        raw = dict(self.raw)
        raw["methods"] = {k: self.reports[k].to_dict() for k in sorted(self.reports)}
        return json.dumps(raw, indent=2, sort_keys=True, allow_nan=False) + "\n"


def parse_report(data: dict) -> ReportFile:
    """Validate a report.json object and rebuild its rejection reports."""
    jsonschema.validate(data, REPORT_SCHEMA)
    reports = {k: RejectionReport.from_dict(v) for k, v in data["methods"].items()}
    return ReportFile(data, reports)


def load_report(path) -> ReportFile:
    with open(path, encoding="utf-8") as fh:
        return parse_report(json.load(fh))


def render_table(rf: ReportFile, top: int = 10) -> str:
    raw = rf.raw
    lines = [
        f"N = {raw['n_total']}  K = {raw['n_partitions']}  m = {raw['m']}  "
        f"carrier = Beta({raw['carrier']['gamma']:.4g}, {raw['carrier']['beta']:.4g})  "
        f"eta = {raw['eta_used']:.4g} ({raw['eta_source']})",
        "",
        f"{'method':<12} {'alpha':>6} {'threshold':>12} {'rejected':>9} {'left':>6} {'right':>6}",
    ]
    for name in sorted(rf.reports):
        rep = rf.reports[name]
        thr = rep.global_threshold if rep.global_threshold is not None else rep.density_cutoff
        thr_s = "per-part." if rep.method == WEIGHTED_BH else (f"{thr:.4g}" if thr is not None else "-")
        tails = rep.tail_counts()
        left, right = (str(tails[0]), str(tails[1])) if tails else ("-", "-")
        lines.append(f"{name:<12} {rep.alpha:>6.3g} {thr_s:>12} {rep.total_rejected:>9} {left:>6} {right:>6}")
    chart = sorted(raw["diagnostics"]["h_chart"], key=lambda r: -r["H"])[:top]
    lines += ["", f"top {len(chart)} partitions by H:"]
    lines += [f"  {r['id']:<20} H = {r['H']:.4g}" for r in chart]
    return "\n".join(lines) + "\n"

"""Command-line entry point: ``lpfdr <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import wire
from .inference import METHODS
from .io import PVALUE_KINDS, RAW, RIGHT, ParseError, ingest_partition
from .lp_model import DEFAULT_M, DataError, build_model
from .partition_engine import LPSummary, MomentSummary, merge_lp, merge_moments, summarize_lp, summarize_moments
from .pipeline import PipelineError, RunConfig, load_report, render_table, run_pipeline
from .simulate import example1_partition, example2, mixture, parse_alternative, write_partitions
from .special import BetaParams
from .worker import serve

logger = logging.getLogger("lpfdr")


def _methods(text: str) -> tuple:
    out = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in out if t not in METHODS or t == "classical-bh"]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}")
    return out


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return v


def _read_jsonl(path: str) -> list[dict]:
    fh = sys.stdin if path == "-" else open(path, encoding="utf-8")
    with fh:
        return [wire.decode(line) for line in fh if line.strip()]


def cmd_simulate_example2(args) -> int:
    manifest = write_partitions(example2(args.seed, args.kind), args.out)
    print(manifest)
    return 0


def cmd_simulate_mixture(args) -> int:
    parts = mixture(args.n, args.eta, parse_alternative(args.alternative), args.k, args.seed, args.kind)
    print(write_partitions(parts, args.out))
    return 0


def cmd_split_example1(args) -> int:
    z = np.array([float(t) for t in Path(args.zfile).read_text().split()])
    print(write_partitions(example1_partition(z, args.seed, args.k), args.out))
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig(
        input=list(args.inputs),
        manifest=args.manifest,
        m=args.m,
        alpha=args.alpha,
        alpha0=args.alpha0,
        eta=args.eta,
        methods=args.method,
        mode=args.mode,
        seed=args.seed,
        output_dir=args.output_dir,
        pvalue_kind=args.pvalue_kind,
        workers=args.workers,
    )
    result = run_pipeline(cfg)
    if args.output_dir:
        print(render_table(load_report(Path(args.output_dir) / "report.json")), end="")
    else:
        print(result.report_json(), end="")
    return 0


def cmd_summarize(args) -> int:
    if args.serve:
        return serve(sys.stdin, sys.stdout)
    if not args.files:
        raise SystemExit("summarize: give partition files or --serve")
    parts = sorted((ingest_partition(f, args.pvalue_kind) for f in args.files), key=lambda p: p.id)
    if args.round == 1:
        lines = [wire.encode("moment_summary", summarize_moments(p).to_dict()) for p in parts]
    else:
        if not args.carrier:
            raise SystemExit("summarize --round 2 needs --carrier")
        c = json.loads(Path(args.carrier).read_text())
        carrier = BetaParams(c["gamma"], c["beta"])
        m = int(c.get("m", args.m))
        lines = [wire.encode("lp_summary", summarize_lp(p, carrier, m).to_dict()) for p in parts]
    sys.stdout.write("".join(lines))
    return 0


def cmd_merge(args) -> int:
    msgs = _read_jsonl(args.summaries)
    if args.round == 1:
        merged = merge_moments(MomentSummary.from_dict(m["payload"]) for m in msgs if m["type"] == "moment_summary")
        c = merged.fit()
        out = {"gamma": c.gamma, "beta": c.beta, "m": args.m, "n_total": merged.n_total}
    else:
        lp = [LPSummary.from_dict(m["payload"]) for m in msgs if m["type"] == "lp_summary"]
        if not lp:
            raise DataError("no lp_summary records found")
        n_total = sum(s.n for s in lp)
        out = build_model(lp[0].carrier, merge_lp(lp, "beta"), n_total, args.eta).to_dict()
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    print(render_table(load_report(args.report), args.top), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpfdr", description="Decentralized nonparametric multiple testing.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-example2", help="write the 200-partition Example 2 layout")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kind", choices=PVALUE_KINDS, default=RIGHT, help="p-value kind recorded in the manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate_example2)

    s = sub.add_parser("simulate-mixture", help="write a two-group mixture sample")
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--eta", type=float, default=0.9)
    s.add_argument("--alternative", default="normal:2", help="'beta:a,b' or 'normal:mu'")
    s.add_argument("--k", type=int, default=1, help="number of partitions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kind", choices=PVALUE_KINDS, default="right-from-z", help="kind for normal-shift z-values")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate_mixture)

    s = sub.add_parser("split-example1", help="partition a z-value file with tails concentrated in 6 shards")
    s.add_argument("zfile", help="whitespace-separated z-values (e.g. the 6033-gene prostate file)")
    s.add_argument("--k", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split_example1)

    s = sub.add_parser("run", help="run the two-round protocol and write artifacts")
    s.add_argument("inputs", nargs="*", help="partition files (kind from --pvalue-kind)")
    s.add_argument("--manifest", help="JSON list of {path, kind}")
    s.add_argument("--m", type=int, default=DEFAULT_M)
    s.add_argument("--alpha", type=_unit, default=0.1)
    s.add_argument("--alpha0", type=_unit, default=0.5)
    s.add_argument("--eta", type=float, default=None, help="fixed null proportion (default: estimate)")
    s.add_argument("--method", type=_methods, default=("smooth-bh", "local-fdr"),
                   help="comma list of smooth-bh, local-fdr, hc, weighted-bh")
    s.add_argument("--mode", choices=("inprocess", "workers"), default="inprocess")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--output-dir", default=None)
    s.add_argument("--pvalue-kind", choices=PVALUE_KINDS, default=RAW)
    s.add_argument("--workers", type=int, default=None, help="pool size (default LPFDR_THREADS or cpu count, max 8)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="worker entry: serve the protocol or summarize files")
    s.add_argument("files", nargs="*")
    s.add_argument("--serve", action="store_true", help="speak the wire protocol on stdin/stdout")
    s.add_argument("--round", type=int, choices=(1, 2), default=1)
    s.add_argument("--carrier", help="carrier JSON from 'merge --round 1' (round 2)")
    s.add_argument("--m", type=int, default=DEFAULT_M)
    s.add_argument("--pvalue-kind", choices=PVALUE_KINDS, default=RAW)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("merge", help="reduce summaries: round 1 -> carrier JSON, round 2 -> model JSON")
    s.add_argument("summaries", help="JSONL file of summaries, or '-' for stdin")
    s.add_argument("--round", type=int, choices=(1, 2), default=1)
    s.add_argument("--m", type=int, default=DEFAULT_M)
    s.add_argument("--eta", type=float, default=None)
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("report", help="print a report.json as a table")
    s.add_argument("report")
    s.add_argument("--top", type=int, default=10)
    s.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"lpfdr: {exc}", file=sys.stderr)
        return 2
    except (ParseError, DataError, ValueError, OSError, wire.WireError) as exc:
        print(f"lpfdr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

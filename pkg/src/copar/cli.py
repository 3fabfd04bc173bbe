"""Command line entry point: ``copar sim|node|generate|report``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import signal
import sys
from pathlib import Path

from .core import ConfigurationError, ConsistencyFault
from .metrics import Trace, format_summary, merge_traces, read_trace, summarize, write_rows, write_trace
from .workload import RunConfig, load_run_config


def _config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.legacy_charge:
        changes["legacy_charge"] = True
    return cfg.replace(**changes) if changes else cfg


def _write_report(trace: Trace, outdir: Path | None, figures: bool = True) -> str:
    report = summarize(trace)
    text = format_summary(report)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "report.csv", "w", newline="") as fh:
            write_rows(report, fh)
        (outdir / "summary.txt").write_text(text + "\n")
        if figures:
            from .plotting import render_all

            render_all(report, outdir)
    return text


def cmd_sim(args) -> int:
    from .runner import run_simulation

    cfg = _config(args)
    result = run_simulation(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        write_trace(result.trace, fh)
    print(_write_report(result.trace, out, figures=not args.no_figures))
    print(f"\ntrace and report written to {out}/")
    return 0


def cmd_node(args) -> int:
    cfg = _config(args)
    trace = Trace(header=cfg.to_dict())
    out = Path(args.out or f"trace-node{args.id}.csv")

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        from .transport.net import serve_node

        await serve_node(cfg, args.id, trace, stop)

    with open(out, "w", newline="") as fh:
        trace.stream_to(fh)
        asyncio.run(main())
    return 0


def cmd_generate(args) -> int:
    from .transport.net import drive

    cfg = _config(args)
    trace = Trace(header=cfg.to_dict())
    out = Path(args.out or "trace-generator.csv")
    with open(out, "w", newline="") as fh:
        trace.stream_to(fh)
        asyncio.run(drive(cfg, trace))
    print(f"generated {cfg.total_tx} transactions; trace written to {out}")
    return 0


def cmd_report(args) -> int:
    traces = []
    for path in args.traces:
        with open(path) as fh:
            traces.append(read_trace(fh))
    trace = traces[0] if len(traces) == 1 else merge_traces(traces)
    print(_write_report(trace, Path(args.out) if args.out else None, figures=not args.no_figures))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_opts(p):
        p.add_argument("config", help="run configuration (XML or JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument(
            "--legacy-charge",
            action="store_true",
            help="charge the owner's budget for unoptimized commits instead of redistributing",
        )

    p = sub.add_parser("sim", help="deterministic simulated run")
    run_opts(p)
    p.add_argument("--out", default="copar-out", help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("node", help="start one networked node")
    run_opts(p)
    p.add_argument("id", type=int)
    p.add_argument("--out", default=None, help="trace file")
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("generate", help="drive a networked run")
    run_opts(p)
    p.add_argument("--out", default=None, help="trace file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="summarize one or more trace files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", default=None, help="directory for report.csv and figures")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ConsistencyFault as exc:
        print(f"consistency fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

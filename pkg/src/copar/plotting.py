"""Static figures for a run report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import RunReport  # noqa: E402


def outcome_figure(report: RunReport, path, title: str = ""):
    labels = ["optimistic", "undone", "discarded", "never picked", "orphaned", "additions"]
    values = [
        report.done_optimistically,
        report.undone,
        report.discarded,
        report.never_picked,
        report.orphaned,
        report.additions,
    ]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    bars = ax.bar(labels, values, color=["#3b7dd8", "#d8543b", "#999999", "#cccccc", "#e0a030", "#5aa05a"])
    ax.bar_label(bars)
    ax.set_ylabel("transactions")
    ax.set_title(title or f"{report.total} transactions")
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def timing_figure(report: RunReport, path):
    seqs_pt = [r.seq for r in report.rows if r.pt_ms is not None]
    pts = [r.pt_ms for r in report.rows if r.pt_ms is not None]
    seqs_ot = [r.seq for r in report.rows if r.ot_ms is not None]
    ots = [r.ot_ms for r in report.rows if r.ot_ms is not None]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.scatter(seqs_pt, pts, s=8, label="PT (pessimistic)")
    ax.scatter(seqs_ot, ots, s=8, marker="x", label="OT (optimistic)")
    if pts or ots:
        ax.set_yscale("log")
    ax.set_xlabel("transaction")
    ax.set_ylabel("ms")
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_all(report: RunReport, outdir, title: str = "") -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return [
        outcome_figure(report, outdir / "outcomes.png", title),
        timing_figure(report, outdir / "timings.png"),
    ]

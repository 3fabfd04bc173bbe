"""Event traces and the per-run report derived from them."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

from .core import Vector

TRACE_MAGIC = "# copar trace v1"

KINDS = frozenset(
    {
        "submitted",
        "takeover",
        "picked",
        "opt_granted",
        "opt_discarded",
        "opt_won",
        "opt_backout",
        "prepared",
        "aborted",
        "committed",
        "violation",
        "undone",
        "removed",
        "redistributed",
        "restart",
        "dropped",
        "orphaned",
        "msg_lost",
    }
)

# events that only make sense once the generator has issued the transaction
_NEEDS_SUBMIT = frozenset(
    {"picked", "opt_granted", "opt_discarded", "opt_won", "prepared", "committed", "violation", "undone"}
)


@dataclass(frozen=True)
class TraceEvent:
    time_us: int
    kind: str
    seq: int
    node: int
    vector: Optional[Vector] = None
    detail: str = ""
    anomaly: bool = False


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)
    header: dict = field(default_factory=dict)
    _submitted: set = field(default_factory=set, repr=False)
    _prepared: set = field(default_factory=set, repr=False)
    _violations: set = field(default_factory=set, repr=False)
    _sink: Optional[object] = field(default=None, repr=False)

    def stream_to(self, out: TextIO) -> None:
        """Write every subsequently recorded event to ``out`` as it arrives."""
        _write_preamble(self, out)
        self._sink = csv.writer(out, lineterminator="\n")
        self._sink_file = out

    def record(self, event: TraceEvent) -> TraceEvent:
        """Append ``event``; lifecycle violations are kept but flagged."""
        if event.kind not in KINDS:
            raise ValueError(f"unknown trace event kind {event.kind!r}")
        bad = False
        if event.kind in ("submitted", "takeover"):
            self._submitted.add(event.seq)
        elif event.kind in _NEEDS_SUBMIT and event.seq not in self._submitted:
            bad = True
        if event.kind == "prepared":
            self._prepared.add(event.seq)
        elif event.kind in ("committed", "violation"):
            bad = bad or event.seq not in self._prepared
            if event.kind == "violation":
                self._violations.add(event.seq)
        elif event.kind == "undone" and event.seq not in self._violations:
            bad = True
        if bad and not event.anomaly:
            event = TraceEvent(event.time_us, event.kind, event.seq, event.node, event.vector, event.detail, True)
        self.events.append(event)
        if self._sink is not None:
            self._sink.writerow(_row(event))
            self._sink_file.flush()
        return event

    @property
    def anomalies(self) -> list[TraceEvent]:
        return [e for e in self.events if e.anomaly]


def record_event(trace: Trace, event: TraceEvent) -> Trace:
    trace.record(event)
    return trace


COLUMNS = ("time_ms", "event", "seq", "node", "vector", "detail", "anomaly")


def _fmt_ms(us: int) -> str:
    return f"{us // 1000}.{us % 1000:03d}"


def _parse_ms(text: str) -> int:
    whole, _, frac = text.partition(".")
    return int(whole) * 1000 + int((frac + "000")[:3])


def _row(e: TraceEvent) -> tuple:
    vec = "" if e.vector is None else ";".join(str(v) for v in e.vector)
    return (_fmt_ms(e.time_us), e.kind, e.seq, e.node, vec, e.detail, int(e.anomaly))


def _write_preamble(trace: Trace, out: TextIO) -> None:
    out.write(TRACE_MAGIC + "\n")
    out.write("# config: " + json.dumps(trace.header, sort_keys=True) + "\n")
    out.write(",".join(COLUMNS) + "\n")


def write_trace(trace: Trace, out: TextIO) -> None:
    _write_preamble(trace, out)
    writer = csv.writer(out, lineterminator="\n")
    for e in trace.events:
        writer.writerow(_row(e))


def trace_text(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def merge_traces(traces: Iterable[Trace]) -> Trace:
    """Combine per-process traces from a networked run, ordered by timestamp."""
    traces = list(traces)
    merged = Trace(header=traces[0].header if traces else {})
    tagged = [(e.time_us, i, n, e) for i, t in enumerate(traces) for n, e in enumerate(t.events)]
    merged.events = [e for *_, e in sorted(tagged, key=lambda x: x[:3])]
    return merged


def read_trace(src: TextIO) -> Trace:
    header: dict = {}
    lines = []
    for line in src:
        if line.startswith("# config: "):
            header = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            lines.append(line)
    trace = Trace(header=header)
    for row in csv.DictReader(lines):
        vec = tuple(int(v) for v in row["vector"].split(";")) if row["vector"] else None
        trace.events.append(
            TraceEvent(
                _parse_ms(row["time_ms"]),
                row["event"],
                int(row["seq"]),
                int(row["node"]),
                vec,
                row["detail"],
                row["anomaly"] == "1",
            )
        )
    return trace


@dataclass
class TxRow:
    seq: int
    kind: str
    owner: int
    doer: Optional[int] = None
    ot_ms: Optional[float] = None
    pt_ms: Optional[float] = None
    outcome: str = "pending"
    opt_class: str = "never_picked"
    undone: bool = False


@dataclass
class RunReport:
    rows: list[TxRow]
    total: int = 0
    additions: int = 0
    done_optimistically: int = 0
    discarded: int = 0
    never_picked: int = 0
    orphaned: int = 0
    undone: int = 0
    committed: int = 0
    violations: int = 0
    pt_min: float = 0.0
    pt_max: float = 0.0
    pt_mean: float = 0.0
    ot_min: float = 0.0
    ot_max: float = 0.0
    ot_mean: float = 0.0
    pt_ot_ratio: float = 0.0
    partial: bool = False


def summarize(trace: Trace) -> RunReport:
    """Per-transaction outcome rows and run aggregates.

    PT runs from the first round start to the commit/violation decision at
    the coordinator. OT runs from child-queue pickup to grant at the node
    whose report won the first-responder race.
    """
    rows: dict[int, TxRow] = {}
    picked: dict[tuple[int, int], int] = {}
    granted: dict[tuple[int, int], int] = {}
    any_picked: set[int] = set()
    any_granted: set[int] = set()
    round_start: dict[int, int] = {}
    for e in trace.events:
        if e.seq <= 0:
            continue
        if e.kind == "submitted":
            rows[e.seq] = TxRow(e.seq, e.detail or "request", e.node)
            continue
        row = rows.get(e.seq)
        if row is None:
            continue
        if e.kind == "takeover":
            row.owner = e.node
        elif e.kind == "picked":
            picked.setdefault((e.seq, e.node), e.time_us)
            any_picked.add(e.seq)
        elif e.kind == "opt_granted":
            granted.setdefault((e.seq, e.node), e.time_us)
            any_granted.add(e.seq)
        elif e.kind == "opt_won":
            row.doer = e.node
            if (e.seq, e.node) in granted and (e.seq, e.node) in picked:
                row.ot_ms = (granted[(e.seq, e.node)] - picked[(e.seq, e.node)]) / 1000
        elif e.kind == "prepared":
            round_start.setdefault(e.seq, e.time_us)
        elif e.kind in ("committed", "violation"):
            row.outcome = e.kind
            if e.seq in round_start:
                row.pt_ms = (e.time_us - round_start[e.seq]) / 1000
        elif e.kind == "undone":
            row.undone = True

    ordered = [rows[s] for s in sorted(rows)]
    for row in ordered:
        if row.kind == "addition":
            row.opt_class = "addition"
        elif row.doer is not None:
            row.opt_class = "optimistic"
        elif row.seq in any_granted:
            row.opt_class = "orphaned"
        elif row.seq in any_picked:
            row.opt_class = "discarded"
    return _aggregate(ordered)


def _aggregate(rows: list[TxRow]) -> RunReport:
    rep = RunReport(rows=rows, total=len(rows))
    for row in rows:
        rep.additions += row.kind == "addition"
        rep.done_optimistically += row.opt_class == "optimistic"
        rep.discarded += row.opt_class == "discarded"
        rep.never_picked += row.opt_class == "never_picked"
        rep.orphaned += row.opt_class == "orphaned"
        rep.undone += row.undone
        rep.committed += row.outcome == "committed"
        rep.violations += row.outcome == "violation"
        rep.partial |= row.outcome == "pending"
    pts = [r.pt_ms for r in rows if r.pt_ms is not None]
    ots = [r.ot_ms for r in rows if r.ot_ms is not None]
    if pts:
        rep.pt_min, rep.pt_max, rep.pt_mean = min(pts), max(pts), statistics.fmean(pts)
    if ots:
        rep.ot_min, rep.ot_max, rep.ot_mean = min(ots), max(ots), statistics.fmean(ots)
    ratios = [r.pt_ms / r.ot_ms for r in rows if r.pt_ms is not None and r.ot_ms]
    if ratios:
        rep.pt_ot_ratio = statistics.fmean(ratios)
    return rep


ROW_COLUMNS = ("seq", "kind", "owner", "doer", "ot_ms", "pt_ms", "outcome")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def write_rows(report: RunReport, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ROW_COLUMNS)
    for r in report.rows:
        outcome = "undone" if r.undone else r.outcome
        writer.writerow([_cell(v) for v in (r.seq, r.kind, r.owner, r.doer, r.ot_ms, r.pt_ms, outcome)])


def format_summary(report: RunReport) -> str:
    lines = [
        f"transactions            {report.total}",
        f"  additions             {report.additions}",
        f"  done optimistically   {report.done_optimistically}",
        f"  undone                {report.undone}",
        f"  discarded             {report.discarded}",
        f"  never picked          {report.never_picked}",
        f"  orphaned              {report.orphaned}",
        f"  committed             {report.committed}",
        f"  violations            {report.violations}",
        "",
        f"{'':6}{'Min':>12}{'Max':>12}{'Mean':>12}  Ave PT/OT ratio",
        f"{'PT':6}{report.pt_min:>10.3f}ms{report.pt_max:>10.3f}ms{report.pt_mean:>10.3f}ms  {report.pt_ot_ratio:.1f}",
        f"{'OT':6}{report.ot_min:>10.3f}ms{report.ot_max:>10.3f}ms{report.ot_mean:>10.3f}ms",
    ]
    if report.partial:
        lines.append("")
        lines.append("WARNING: trace incomplete, some transactions never finished")
    return "\n".join(lines)


def iter_kind(trace: Trace, kind: str) -> Iterable[TraceEvent]:
    return (e for e in trace.events if e.kind == kind)

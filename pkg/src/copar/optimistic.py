"""Temporary (optimistic) processing at a single node."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import NodeCounts, ProtocolError, Transaction, TxKind, TxState, Vector, add, check_all_nonneg, sub


class Reply(enum.IntEnum):
    KEEP = 0
    BACKOUT = 1


@dataclass(frozen=True)
class OptReport:
    tx_seq: int
    doer: int
    granted_delta: Vector


@dataclass
class OwnerLedgerEntry:
    """What the owner knows about one of its transactions."""

    tx_seq: int
    optimistic_doer: Optional[int] = None
    reported: bool = False
    permanently_done: bool = False
    permanent_outcome: Optional[TxState] = None
    undone: bool = False


def try_optimistic(counts: NodeCounts, tx: Transaction) -> bool:
    """Grant ``tx`` against the temporary count if every entry stays >= 0.

    On success T and the net allocation counter are updated in place.
    """
    if tx.kind is TxKind.ADDITION:
        raise ProtocolError(f"addition {tx.seq} cannot be processed optimistically")
    if not check_all_nonneg(counts.T, tx.delta):
        return False
    counts.T = add(counts.T, tx.delta)
    for k, r in enumerate(tx.delta):
        counts.ra_current[k] -= r
    return True


def apply_backout(counts: NodeCounts, delta: Vector) -> None:
    # Backing out a return after a redistribution may undershoot; clamp and stop.
    T = list(sub(counts.T, delta))
    for k, r in enumerate(delta):
        counts.ra_current[k] += r
        if T[k] < 0:
            T[k] = 0
            counts.temp_stopped[k] = True
    counts.T = tuple(T)


def handle_opt_report(entry: OwnerLedgerEntry, report: OptReport) -> tuple[Reply, bool]:
    """Owner-side first-responder rule.

    Returns the reply for the reporting node and whether the transaction
    has just become undone (a late grant for a transaction already found
    to be a violation).
    """
    if report.tx_seq != entry.tx_seq:
        raise ProtocolError(f"report for {report.tx_seq} sent to ledger {entry.tx_seq}")
    if entry.reported:
        return Reply.BACKOUT, False
    entry.reported = True
    if not entry.permanently_done:
        entry.optimistic_doer = report.doer
        return Reply.KEEP, False
    if entry.permanent_outcome is TxState.COMMITTED:
        return Reply.KEEP, False
    entry.undone = True
    return Reply.BACKOUT, True


@dataclass
class TemporaryProcessor:
    """Child queue plus the bookkeeping needed to undo local grants."""

    counts: NodeCounts
    child_queue: deque = field(default_factory=deque)
    granted: dict[int, Vector] = field(default_factory=dict)
    busy: bool = False

    def enqueue(self, tx: Transaction) -> None:
        if tx.kind is TxKind.ADDITION:
            raise ProtocolError("additions never enter child queues")
        self.child_queue.append(tx)

    def remove(self, seq: int) -> bool:
        for i, tx in enumerate(self.child_queue):
            if tx.seq == seq:
                del self.child_queue[i]
                return True
        return False

    def blocked(self) -> bool:
        """Head consumes a resource whose budget was clamped to zero."""
        if not self.child_queue:
            return False
        head = self.child_queue[0]
        return any(r < 0 and stop for r, stop in zip(head.delta, self.counts.temp_stopped))

    def pick(self) -> Optional[Transaction]:
        if self.busy or not self.child_queue or self.blocked():
            return None
        self.busy = True
        return self.child_queue.popleft()

    def decide(self, tx: Transaction) -> bool:
        self.busy = False
        ok = try_optimistic(self.counts, tx)
        if ok:
            self.granted[tx.seq] = tx.delta
        return ok

    def backout(self, seq: int) -> Vector:
        try:
            delta = self.granted.pop(seq)
        except KeyError:
            raise ProtocolError(f"backout for {seq}, which was never granted here") from None
        apply_backout(self.counts, delta)
        return delta

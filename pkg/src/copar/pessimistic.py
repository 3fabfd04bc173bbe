"""Sequenced two-phase commit over the permanent counts."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .core import NodeCounts, Transaction, TxKind, TxState, Vector, check_all_nonneg
from .faults import majority_reachable
from .optimistic import OwnerLedgerEntry


class Vote(enum.IntEnum):
    NO = 0
    YES = 1


class Phase(enum.Enum):
    PREPARING = "preparing"
    COMMITTING = "committing"
    DONE = "done"


class Outcome(enum.IntEnum):
    COMMITTED = 0
    VIOLATION = 1
    ABORTED_MINORITY = 2

    @property
    def state(self) -> TxState:
        return {Outcome.COMMITTED: TxState.COMMITTED, Outcome.VIOLATION: TxState.VIOLATION}[self]


@dataclass
class TwoPhaseRound:
    tx: Transaction
    coordinator: int
    participants: tuple[int, ...]
    initial_n: int
    attempt: int = 0
    votes: dict[int, Vote] = field(default_factory=dict)
    reported_ra: dict[int, Vector] = field(default_factory=dict)
    acks: set[int] = field(default_factory=set)
    outcome: Optional[Outcome] = None
    phase: Phase = Phase.PREPARING
    started_at: int = 0
    pool_changed: bool = False

    @property
    def tx_seq(self) -> int:
        return self.tx.seq

    def all_voted(self) -> bool:
        return set(self.votes) >= set(self.participants)

    def all_acked(self) -> bool:
        return self.acks >= set(self.participants)


@dataclass
class RunningTotals:
    """Coordinator's view of net allocations per node."""

    ra_per_node: dict[int, Vector]

    @property
    def RA(self) -> Vector:
        rows = list(self.ra_per_node.values())
        return tuple(sum(col) for col in zip(*rows))


def next_coordinator(completed_seq: int, ownership: Mapping[int, int]) -> Optional[int]:
    """Owner of the transaction after ``completed_seq``; ``None`` means idle."""
    return ownership.get(completed_seq + 1)


def handle_prepare(counts: NodeCounts, tx: Transaction) -> Vote:
    if tx.kind is TxKind.ADDITION or check_all_nonneg(counts.P, tx.delta):
        return Vote.YES
    return Vote.NO


def tally(initial_n: int, responders: Sequence[int], votes: Mapping[int, Vote], local_ok: bool) -> Outcome:
    """Decide a round once phase one has closed (all votes in or timed out)."""
    if not majority_reachable(initial_n, len(responders)):
        return Outcome.ABORTED_MINORITY
    return Outcome.COMMITTED if local_ok else Outcome.VIOLATION


def finalize(entry: OwnerLedgerEntry, outcome: Outcome) -> bool:
    """Record the permanent outcome on the owner ledger.

    Returns True when the transaction must be marked undone: it was
    promised optimistically and turned out to be a violation.
    """
    entry.permanently_done = True
    entry.permanent_outcome = outcome.state
    if outcome is Outcome.VIOLATION and entry.optimistic_doer is not None:
        entry.undone = True
        return True
    return False

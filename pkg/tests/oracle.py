"""Independent reference models used by the acceptance tests.

These deliberately avoid the package's node and protocol code: a single
permanent count is replayed in sequence order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from copar.core import Transaction, TxKind
from copar.workload import GeneratorState, RunConfig, next_transaction


@dataclass
class Replay:
    P: tuple[int, ...]
    committed: list[int] = field(default_factory=list)
    violations: list[int] = field(default_factory=list)


def regenerate(cfg: RunConfig) -> list[Transaction]:
    state = GeneratorState.fresh(cfg.seed)
    return [next_transaction(state, cfg) for _ in range(cfg.total_tx)]


def sequential_replay(R, txs) -> Replay:
    P = list(R)
    out = Replay(tuple(P))
    for tx in sorted(txs, key=lambda t: t.seq):
        after = [p + r for p, r in zip(P, tx.delta)]
        if tx.kind is TxKind.ADDITION or all(v >= 0 for v in after):
            P = after
            out.committed.append(tx.seq)
        else:
            out.violations.append(tx.seq)
    out.P = tuple(P)
    return out


def expected_undone(replay: Replay, promised: set[int]) -> set[int]:
    """Transactions promised optimistically whose sequential application fails."""
    return set(replay.violations) & promised

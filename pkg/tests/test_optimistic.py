import pytest
from hypothesis import given, strategies as st

from copar.core import NodeCounts, ProtocolError, Transaction, TxKind, TxState
from copar.optimistic import (
    OptReport,
    OwnerLedgerEntry,
    Reply,
    TemporaryProcessor,
    apply_backout,
    handle_opt_report,
    try_optimistic,
)


def counts(T, P=None):
    P = P if P is not None else tuple(4 * t for t in T)
    return NodeCounts(P=tuple(P), T=tuple(T), ra_recorded=[0] * len(T), ra_current=[0] * len(T), temp_stopped=[False] * len(T))


def test_grant_updates_T_and_net_allocation():
    c = counts((29,))
    assert try_optimistic(c, Transaction(1, 1, (-10,)))
    assert c.T == (19,)
    assert c.ra_current == [10]


def test_return_is_negative_allocation():
    c = counts((29,))
    assert try_optimistic(c, Transaction(1, 1, (4,)))
    assert c.T == (33,) and c.ra_current == [-4]


@pytest.mark.parametrize("T, delta", [((5,), (-10,)), ((20, 3), (-5, -5))])
def test_discard_leaves_state_untouched(T, delta):
    c = counts(T)
    assert not try_optimistic(c, Transaction(1, 1, delta))
    assert c.T == T and c.ra_current == [0] * len(T)


def test_additions_rejected():
    with pytest.raises(ProtocolError):
        try_optimistic(counts((1,)), Transaction(1, 1, (3,), TxKind.ADDITION))


def test_backout_restores_and_clamps():
    c = counts((10,))
    apply_backout(c, (-5,))
    assert c.T == (15,) and c.ra_current == [-5]
    c = counts((2,))
    apply_backout(c, (6,))
    assert c.T == (0,) and c.temp_stopped == [True]


@given(st.integers(0, 100), st.integers(-100, 100))
def test_grant_then_backout_is_identity(T0, r):
    c = counts((T0,))
    if try_optimistic(c, Transaction(1, 1, (r,))):
        apply_backout(c, (r,))
    assert c.T == (T0,) and c.ra_current == [0]


def test_first_responder_wins():
    entry = OwnerLedgerEntry(7)
    assert handle_opt_report(entry, OptReport(7, 2, (-3,))) == (Reply.KEEP, False)
    assert entry.optimistic_doer == 2
    assert handle_opt_report(entry, OptReport(7, 3, (-3,))) == (Reply.BACKOUT, False)
    assert entry.optimistic_doer == 2


def test_late_report_after_commit_kept():
    entry = OwnerLedgerEntry(7, permanently_done=True, permanent_outcome=TxState.COMMITTED)
    assert handle_opt_report(entry, OptReport(7, 2, (-3,))) == (Reply.KEEP, False)


def test_late_report_after_violation_undone():
    entry = OwnerLedgerEntry(7, permanently_done=True, permanent_outcome=TxState.VIOLATION)
    assert handle_opt_report(entry, OptReport(7, 2, (-3,))) == (Reply.BACKOUT, True)
    assert entry.undone


def test_report_for_wrong_ledger():
    with pytest.raises(ProtocolError):
        handle_opt_report(OwnerLedgerEntry(1), OptReport(2, 1, (0,)))


def test_processor_fifo_and_removal():
    p = TemporaryProcessor(counts((10,)))
    for seq in (1, 2, 3):
        p.enqueue(Transaction(seq, 1, (-4,)))
    assert p.remove(2) and not p.remove(2)
    tx = p.pick()
    assert tx.seq == 1
    assert p.pick() is None  # busy
    assert p.decide(tx)
    tx = p.pick()
    assert tx.seq == 3 and p.decide(tx)
    assert p.counts.T == (2,)
    assert p.backout(1) == (-4,)
    assert p.counts.T == (6,)
    with pytest.raises(ProtocolError):
        p.backout(1)


def test_processor_blocks_on_stopped_resource():
    p = TemporaryProcessor(counts((0,)))
    p.counts.temp_stopped[0] = True
    p.enqueue(Transaction(1, 1, (-1,)))
    assert p.blocked() and p.pick() is None
    p.child_queue[0] = Transaction(1, 1, (2,))
    assert not p.blocked()

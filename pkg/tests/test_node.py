"""Scripted scenarios against the node actor on the simulator."""

import pytest

from copar.core import ConsistencyFault, Transaction, TxKind
from copar.metrics import iter_kind
from copar.runner import build, run_simulation
from copar.transport import MsgType, make

from conftest import make_cfg


def flat(ms):
    return lambda s, d, rng: int(ms * 1000)


def kinds(res, kind):
    return [e.seq for e in iter_kind(res.trace, kind)]


def test_single_request_goes_both_ways():
    cfg = make_cfg(n=3, R=(30,), total_tx=1)
    res = run_simulation(cfg, script=[Transaction(1, 2, (-5,))], latency=flat(2))
    assert kinds(res, "committed") == [1]
    assert len(kinds(res, "opt_won")) == 1
    assert {n.counts.P for n in res.nodes.values()} == {(25,)}
    assert all(not n.temp.child_queue and not n.parent_queue for n in res.nodes.values())


def test_addition_skips_child_queues():
    cfg = make_cfg(n=2, R=(10,), total_tx=1)
    res = run_simulation(cfg, script=[Transaction(1, 1, (6,), TxKind.ADDITION)], latency=flat(1))
    assert kinds(res, "picked") == []
    assert {n.counts.P for n in res.nodes.values()} == {(16,)}
    # redistribution after the commit spreads the enlarged pool
    assert all(n.counts.T == (9,) for n in res.nodes.values())


def test_violation_without_promise_is_not_undone():
    cfg = make_cfg(n=2, R=(4,), total_tx=1, cost_bound="1")
    res = run_simulation(cfg, script=[Transaction(1, 1, (-9,))], latency=flat(1))
    assert kinds(res, "violation") == [1]
    assert kinds(res, "undone") == []
    assert {n.counts.P for n in res.nodes.values()} == {(4,)}


def test_legacy_charge_decrements_owner_budget():
    cfg = make_cfg(n=2, R=(10,), total_tx=1, cost_bound="1", legacy_charge=True)
    res = run_simulation(cfg, script=[Transaction(1, 1, (5,), TxKind.ADDITION)], latency=flat(1))
    assert res.nodes[1].counts.T == (10,)
    assert res.nodes[2].counts.T == (5,)


def test_silent_participant_excluded_and_budgets_restarted():
    cfg = make_cfg(n=5, R=(100,), total_tx=3, cost_bound="1")
    script = [Transaction(i, 1, (-2,)) for i in range(1, 4)]
    world, nodes, gen = build(cfg, flat(1), script)
    for j in (0, 1, 2, 3, 4):
        world.partition(5, j)
    gen.start()
    while world.sim_step() is not None:
        if gen.done and world.now > gen.done_at + 1_000_000:
            break
    survivors = [nodes[j] for j in (1, 2, 3, 4)]
    assert {n.counts.P for n in survivors} == {(94,)}
    assert all(5 in n.inactive for n in survivors)
    restarts = [e for e in world.trace.events if e.kind == "restart"]
    assert {e.node for e in restarts} == {1, 2, 3, 4}


def test_minority_aborts_and_retries_after_heal():
    cfg = make_cfg(n=3, R=(20,), total_tx=1, timeouts={"prepare_ms": 50, "retry_ms": 50})
    world, nodes, gen = build(cfg, flat(1), [Transaction(1, 1, (-3,))])
    for a, b in ((1, 2), (1, 3)):
        world.partition(a, b)
    gen.start()
    while world.now < 400_000 and world.sim_step() is not None:
        pass
    assert any(e.kind == "aborted" for e in world.trace.events)
    assert nodes[1].counts.P == (20,)
    world.heal(1, 2)
    world.heal(1, 3)
    while world.sim_step() is not None:
        if gen.done:
            break
    assert {n.counts.P for n in nodes.values()} == {(17,)}


def test_digest_mismatch_is_fatal():
    cfg = make_cfg(n=2, R=(10,), total_tx=1)
    world, nodes, _ = build(cfg, flat(1))
    env = make(MsgType.PREPARE, 1, 1, kind=0, delta=[-1], p_digest=[9], participants=[1, 2], attempt=0)
    with pytest.raises(ConsistencyFault):
        nodes[2].on_message(env)


def test_stale_redistribution_ignored():
    cfg = make_cfg(n=2, R=(10,), total_tx=1)
    _, nodes, _ = build(cfg, flat(1))
    node = nodes[2]
    fresh = make(MsgType.REDISTRIBUTE, 1, 5, nodes=[1, 2], targets=[[3], [4]], snapshot=[[0], [0]])
    stale = make(MsgType.REDISTRIBUTE, 1, 4, nodes=[1, 2], targets=[[8], [8]], snapshot=[[0], [0]])
    node.on_message(fresh)
    node.on_message(stale)
    assert node.counts.T == (4,)

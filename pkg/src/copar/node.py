"""The replica node: a permanent and a temporary processor sharing one set
of counts.

Nodes never do I/O themselves. A runtime (the simulator or the socket
server) delivers envelopes through ``on_message`` and timer tokens through
``on_timer``, and provides a context with ``now``, ``send``, ``schedule``,
``trace`` and ``service_time``. Both processors run on the runtime's single
event loop, which is the node's one serialization point for its counts.
"""

from __future__ import annotations

import logging
from typing import Optional

from .core import ConsistencyFault, NodeCounts, ProtocolError, Transaction, TxKind, add, check_all_nonneg, init_counts
from .faults import majority_reachable, restart_partition, should_drop
from .optimistic import OptReport, OwnerLedgerEntry, Reply, TemporaryProcessor, handle_opt_report
from .pessimistic import Outcome, Phase, RunningTotals, TwoPhaseRound, Vote, finalize, handle_prepare
from .reconcile import compute_weights, stale_adjust, targets_for
from .transport.codec import Envelope, MsgType, make
from .workload import GENERATOR_ID, RunConfig

log = logging.getLogger(__name__)


def _ms(value: float) -> int:
    return int(round(value * 1000))


class Node:
    def __init__(self, node_id: int, cfg: RunConfig, ctx):
        self.id = node_id
        self.cfg = cfg
        self.ctx = ctx
        self.initial = cfg.node_ids
        P, T = init_counts(cfg.R, len(self.initial), cfg.c)
        self.counts = NodeCounts(P, T)
        self.temp = TemporaryProcessor(self.counts)
        self.parent_queue: dict[int, Transaction] = {}
        self.ledger: dict[int, OwnerLedgerEntry] = {}
        self.inactive: set[int] = set()
        self.last_finalized = 0
        self.applied: dict[int, Outcome] = {}
        self.seen_child: set[int] = set()
        self.removed: set[int] = set()
        self.notified: set[int] = set()
        self.prepare_counter = 0
        self.last_redistribution = 0
        self.restart_seq = 0
        self.round: Optional[TwoPhaseRound] = None
        self.attempts: dict[int, int] = {}
        self.in_service: Optional[Transaction] = None

    # -- helpers ---------------------------------------------------------

    @property
    def pool(self) -> tuple[int, ...]:
        return tuple(j for j in self.initial if j not in self.inactive)

    def _send(self, dst: int, env: Envelope) -> None:
        if dst in self.inactive:
            return
        self.ctx.send(dst, env)

    def _broadcast(self, env: Envelope, include_self: bool = False) -> None:
        for j in self.pool:
            if j != self.id or include_self:
                self._send(j, env)

    def _exclude(self, nodes, seq: int) -> None:
        """Shrink the pool and restart budgets for the distinguished partition."""
        fresh = {j for j in nodes if j not in self.inactive and j != self.id}
        if not fresh:
            return
        for j in sorted(fresh):
            self.inactive.add(j)
            self.ctx.trace("dropped", seq, detail=f"peer={j}")
        survivors = self.pool
        if not majority_reachable(len(self.initial), len(survivors)):
            return
        self.counts.T = restart_partition(survivors, len(self.initial), self.counts.P, self.cfg.c)[self.id]
        self.counts.ra_current = [0] * self.counts.m
        self.counts.ra_recorded = [0] * self.counts.m
        self.counts.temp_stopped = [False] * self.counts.m
        self.restart_seq = max(self.restart_seq, seq)
        self.ctx.trace("restart", seq, self.counts.T, detail=f"pool={'|'.join(map(str, survivors))}")
        self._pump()

    def _adopt_pool(self, participants, seq: int) -> None:
        if self.id in participants:
            self._exclude([j for j in self.initial if j not in participants], seq)

    # -- dispatch --------------------------------------------------------

    def on_message(self, env: Envelope) -> None:
        if env.sender in self.inactive:
            if env.msg_type is MsgType.OPT_REPORT:
                self.ctx.trace("orphaned", env.tx_seq, env["delta"], detail=f"doer={env.sender}")
            return
        handler = getattr(self, "_on_" + env.msg_type.name.lower())
        handler(env)

    def on_timer(self, token) -> None:
        kind = token[0]
        if kind == "opt":
            self._finish_optimistic()
        elif kind == "phase1":
            self._phase1_timeout(*token[1:])
        elif kind == "phase2":
            self._phase2_timeout(*token[1:])
        elif kind == "retry":
            self._maybe_start_round()
        else:
            raise ProtocolError(f"unknown timer {token!r}")

    # -- transaction intake ----------------------------------------------

    def _on_submit(self, env: Envelope) -> None:
        tx = Transaction(env.tx_seq, self.id, env["delta"], TxKind(env["kind"]))
        if env["takeover"]:
            self._exclude(env["exclude"], tx.seq)
        if tx.seq <= self.last_finalized or tx.seq in self.parent_queue:
            return
        self.parent_queue[tx.seq] = tx
        self.ledger.setdefault(tx.seq, OwnerLedgerEntry(tx.seq))
        if tx.kind is TxKind.REQUEST:
            self._broadcast(make(MsgType.BROADCAST_CHILD, self.id, tx.seq, owner=self.id, delta=tx.delta))
            self._accept_child(tx)
        self._maybe_start_round()

    def _on_broadcast_child(self, env: Envelope) -> None:
        self._accept_child(Transaction(env.tx_seq, env["owner"], env["delta"]))

    def _accept_child(self, tx: Transaction) -> None:
        if tx.seq in self.seen_child or tx.seq in self.removed:
            return
        self.seen_child.add(tx.seq)
        self.temp.enqueue(tx)
        self._pump()

    # -- temporary processor ---------------------------------------------

    def _pump(self) -> None:
        tx = self.temp.pick()
        if tx is None:
            return
        self.in_service = tx
        self.ctx.trace("picked", tx.seq)
        self.ctx.schedule(self.ctx.service_time(), ("opt",))

    def _finish_optimistic(self) -> None:
        tx, self.in_service = self.in_service, None
        if self.temp.decide(tx):
            self.ctx.trace("opt_granted", tx.seq, self.counts.T)
            if tx.owner in self.inactive:
                self.ctx.trace("orphaned", tx.seq, tx.delta, detail=f"owner={tx.owner}")
            else:
                self.ctx.send(tx.owner, make(MsgType.OPT_REPORT, self.id, tx.seq, delta=tx.delta))
        else:
            self.ctx.trace("opt_discarded", tx.seq, self.counts.T)
        self._pump()

    def _on_opt_report(self, env: Envelope) -> None:
        entry = self.ledger.get(env.tx_seq)
        if entry is None:
            raise ProtocolError(f"node {self.id}: report for unknown transaction {env.tx_seq}")
        first = not entry.reported
        reply, undone = handle_opt_report(entry, OptReport(env.tx_seq, env.sender, env["delta"]))
        if first:
            self.ctx.trace("opt_won", env.tx_seq, detail=f"doer={env.sender}")
            # opt_won is attributed to the doer so reports can find the winning grant
        if undone:
            self.ctx.trace("undone", env.tx_seq, detail=f"late doer={env.sender}")
        self.ctx.send(env.sender, make(MsgType.OPT_REPLY, self.id, env.tx_seq, decision=int(reply)))

    def _on_opt_reply(self, env: Envelope) -> None:
        if env["decision"] == Reply.BACKOUT:
            self.temp.backout(env.tx_seq)
            self.ctx.trace("opt_backout", env.tx_seq, self.counts.T)
            self._pump()
        else:
            self.temp.granted.pop(env.tx_seq, None)

    # -- permanent processor: coordinator side ---------------------------

    def _maybe_start_round(self) -> None:
        if self.round is not None:
            return
        tx = self.parent_queue.get(self.last_finalized + 1)
        if tx is not None:
            self._start_round(tx)

    def _count_notification(self, seq: int) -> None:
        if seq not in self.notified:
            self.notified.add(seq)
            self.prepare_counter += 1

    def _start_round(self, tx: Transaction) -> None:
        attempt = self.attempts.get(tx.seq, -1) + 1
        self.attempts[tx.seq] = attempt
        participants = self.pool
        rnd = TwoPhaseRound(tx, self.id, participants, len(self.initial), attempt, started_at=self.ctx.now)
        self.round = rnd
        self._count_notification(tx.seq)
        self.ctx.trace("prepared", tx.seq, tx.delta, detail=f"attempt={attempt} n={len(participants)}")
        env = make(
            MsgType.PREPARE,
            self.id,
            tx.seq,
            kind=int(tx.kind),
            delta=tx.delta,
            p_digest=self.counts.P,
            participants=participants,
            attempt=attempt,
        )
        for j in participants:
            if j != self.id:
                self._send(j, env)
        rnd.votes[self.id] = handle_prepare(self.counts, tx)
        rnd.reported_ra[self.id] = tuple(self.counts.ra_current)
        self.ctx.schedule(_ms(self.cfg.timeouts.prepare_ms), ("phase1", tx.seq, attempt))
        if rnd.all_voted():
            self._decide()

    def _on_vote(self, env: Envelope) -> None:
        rnd = self.round
        if rnd is None or rnd.tx_seq != env.tx_seq or rnd.attempt != env["attempt"]:
            return
        if env.sender not in rnd.participants:
            return
        if env["phase"] == 1 and rnd.phase is Phase.PREPARING:
            rnd.votes[env.sender] = Vote(env["vote"])
            rnd.reported_ra[env.sender] = env["ra"]
            if rnd.all_voted():
                self._decide()
        elif env["phase"] == 2 and rnd.phase is Phase.COMMITTING:
            rnd.acks.add(env.sender)
            if rnd.all_acked():
                self._finalize()

    def _phase1_timeout(self, seq: int, attempt: int) -> None:
        rnd = self.round
        if rnd is None or rnd.tx_seq != seq or rnd.attempt != attempt or rnd.phase is not Phase.PREPARING:
            return
        responders = tuple(j for j in rnd.participants if j in rnd.votes)
        if not majority_reachable(rnd.initial_n, len(responders)):
            rnd.outcome = Outcome.ABORTED_MINORITY
            rnd.phase = Phase.DONE
            self.ctx.trace("aborted", seq, detail=f"attempt={attempt} heard={len(responders)}")
            abort = make(MsgType.ABORT, self.id, seq, attempt=attempt)
            for j in responders:
                if j != self.id:
                    self._send(j, abort)
            self.round = None
            self.ctx.schedule(_ms(self.cfg.timeouts.retry_ms), ("retry",))
            return
        silent = [j for j in rnd.participants if j not in responders]
        rnd.participants = responders
        rnd.pool_changed = True
        self._exclude(silent, seq)
        self._decide()

    def _decide(self) -> None:
        rnd = self.round
        tx = rnd.tx
        local_ok = tx.kind is TxKind.ADDITION or check_all_nonneg(self.counts.P, tx.delta)
        expected = Vote.YES if local_ok else Vote.NO
        for j, v in rnd.votes.items():
            if j in rnd.participants and v is not expected:
                raise ConsistencyFault(f"node {j} voted {v.name} on {tx.seq}, coordinator expected {expected.name}")
        rnd.outcome = Outcome.COMMITTED if local_ok else Outcome.VIOLATION
        rnd.phase = Phase.COMMITTING
        self._apply_commit(tx, rnd.outcome)
        rnd.acks = {self.id}
        self._send_commit(rnd, [j for j in rnd.participants if j != self.id])
        self.ctx.schedule(_ms(self.cfg.timeouts.commit_ms), ("phase2", tx.seq, rnd.attempt))
        if rnd.all_acked():
            self._finalize()

    def _send_commit(self, rnd: TwoPhaseRound, targets) -> None:
        env = make(
            MsgType.COMMIT,
            self.id,
            rnd.tx_seq,
            outcome=int(rnd.outcome),
            kind=int(rnd.tx.kind),
            delta=rnd.tx.delta,
            participants=rnd.participants,
            attempt=rnd.attempt,
        )
        for j in targets:
            self._send(j, env)

    def _phase2_timeout(self, seq: int, attempt: int) -> None:
        rnd = self.round
        if rnd is None or rnd.tx_seq != seq or rnd.attempt != attempt or rnd.phase is not Phase.COMMITTING:
            return
        acked = tuple(j for j in rnd.participants if j in rnd.acks)
        if majority_reachable(rnd.initial_n, len(acked)):
            silent = [j for j in rnd.participants if j not in rnd.acks]
            rnd.participants = acked
            rnd.pool_changed = True
            self._exclude(silent, seq)
            self._finalize()
            return
        # The decision is already taken and applied locally; keep pushing it.
        self._send_commit(rnd, [j for j in rnd.participants if j not in rnd.acks])
        self.ctx.schedule(_ms(self.cfg.timeouts.commit_ms), ("phase2", seq, attempt))

    def _finalize(self) -> None:
        rnd = self.round
        tx = rnd.tx
        rnd.phase = Phase.DONE
        # Advance now; the REMOVE_CHILD loopback may arrive after other events.
        self.last_finalized = max(self.last_finalized, tx.seq)
        self.parent_queue.pop(tx.seq, None)
        entry = self.ledger[tx.seq]
        undone = finalize(entry, rnd.outcome)
        self.ctx.trace(rnd.outcome.name.lower(), tx.seq, self.counts.P, detail=f"participants={len(rnd.participants)}")
        if undone:
            self.ctx.trace("undone", tx.seq, detail=f"doer={entry.optimistic_doer}")
        if rnd.outcome is Outcome.COMMITTED:
            if self.cfg.legacy_charge:
                if entry.optimistic_doer is None:
                    self._charge(tx)
            elif not rnd.pool_changed:
                self._redistribute(rnd)
        done = make(MsgType.REMOVE_CHILD, self.id, tx.seq, outcome=int(rnd.outcome), participants=rnd.participants)
        for j in rnd.participants:
            self._send(j, done)
        self.ctx.send(GENERATOR_ID, done)
        self.round = None

    def _charge(self, tx: Transaction) -> None:
        T = list(add(self.counts.T, tx.delta))
        for k in range(len(T)):
            if T[k] < 0:
                T[k] = 0
                self.counts.temp_stopped[k] = True
        self.counts.T = tuple(T)
        self.ctx.trace("redistributed", tx.seq, self.counts.T, detail="charged")

    def _redistribute(self, rnd: TwoPhaseRound) -> None:
        totals = RunningTotals({j: rnd.reported_ra[j] for j in rnd.participants})
        weights = compute_weights(totals.ra_per_node)
        targets = targets_for(self.counts.P, self.cfg.c, weights)
        nodes = tuple(sorted(targets))
        env = make(
            MsgType.REDISTRIBUTE,
            self.id,
            rnd.tx_seq,
            nodes=nodes,
            targets=[targets[j] for j in nodes],
            snapshot=[totals.ra_per_node[j] for j in nodes],
        )
        for j in nodes:
            self._send(j, env) if j != self.id else self._on_redistribute(env)

    # -- permanent processor: participant side ---------------------------

    def _on_prepare(self, env: Envelope) -> None:
        seq = env.tx_seq
        if seq in self.applied:
            return
        self._count_notification(seq)
        if should_drop(self.prepare_counter, self.cfg.failure, env.sender):
            self._exclude([env.sender], seq)
            return
        if self.id not in env["participants"]:
            return
        if tuple(env["p_digest"]) != self.counts.P:
            raise ConsistencyFault(
                f"node {self.id} P={self.counts.P} but coordinator {env.sender} has {env['p_digest']} at seq {seq}"
            )
        tx = Transaction(seq, env.sender, env["delta"], TxKind(env["kind"]))
        vote = handle_prepare(self.counts, tx)
        self._send(
            env.sender,
            make(MsgType.VOTE, self.id, seq, phase=1, vote=int(vote), attempt=env["attempt"], ra=self.counts.ra_current),
        )

    def _apply_commit(self, tx: Transaction, outcome: Outcome) -> None:
        if tx.seq in self.applied:
            return
        if outcome is Outcome.COMMITTED:
            P = add(self.counts.P, tx.delta)
            if any(p < 0 for p in P):
                raise ConsistencyFault(f"node {self.id}: commit of {tx.seq} drives P negative")
            self.counts.P = P
        self.applied[tx.seq] = outcome

    def _on_commit(self, env: Envelope) -> None:
        tx = Transaction(env.tx_seq, env.sender, env["delta"], TxKind(env["kind"]))
        self._apply_commit(tx, Outcome(env["outcome"]))
        self._adopt_pool(env["participants"], tx.seq)
        self.ctx.send(
            env.sender,
            make(
                MsgType.VOTE,
                self.id,
                tx.seq,
                phase=2,
                vote=int(Vote.YES),
                attempt=env["attempt"],
                ra=self.counts.ra_current,
            ),
        )

    def _on_abort(self, env: Envelope) -> None:
        pass

    def _on_remove_child(self, env: Envelope) -> None:
        seq = env.tx_seq
        self.removed.add(seq)
        if self.temp.remove(seq):
            self.ctx.trace("removed", seq)
        self.parent_queue.pop(seq, None)
        self.last_finalized = max(self.last_finalized, seq)
        self._adopt_pool(env["participants"], seq)
        self._maybe_start_round()

    def _on_redistribute(self, env: Envelope) -> None:
        seq = env.tx_seq
        if seq <= self.last_redistribution or seq <= self.restart_seq:
            return
        if self.id not in env["nodes"]:
            return
        self.last_redistribution = seq
        i = env["nodes"].index(self.id)
        target, snap = env["targets"][i], env["snapshot"][i]
        T = []
        for k in range(self.counts.m):
            value, stopped = stale_adjust(target[k], self.counts.ra_current[k], snap[k])
            T.append(value)
            self.counts.temp_stopped[k] = stopped
        self.counts.T = tuple(T)
        self.counts.ra_recorded = list(self.counts.ra_current)
        self.ctx.trace("redistributed", seq, self.counts.T)
        self._pump()

    def _on_ping(self, env: Envelope) -> None:
        if env["reply"] == 0:
            self.ctx.send(env.sender, make(MsgType.PING, self.id, 0, reply=1, inactive=sorted(self.inactive)))

"""Deterministic discrete-event network.

Time is an integer count of microseconds. Events are ordered by delivery
time with an insertion counter as tie-break, so equal seeds and scripts
replay identically. Delivery on each (sender, receiver) pair is FIFO;
different pairs may reorder.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..metrics import Trace, TraceEvent
from .codec import Envelope

LatencyFn = Callable[[int, int, random.Random], int]


@dataclass(frozen=True)
class Delivery:
    time_us: int
    src: int
    dst: int
    envelope: Envelope
    lost: bool = False


@dataclass(frozen=True)
class TimerFired:
    time_us: int
    actor: int
    token: Any


class SimContext:
    """What an actor sees of the simulated world."""

    def __init__(self, world: "SimWorld", actor: int, service_us: tuple[int, int] = (0, 0)):
        self.world = world
        self.actor = actor
        self.service_us = service_us

    @property
    def now(self) -> int:
        return self.world.now

    def send(self, dst: int, env: Envelope) -> None:
        self.world.send(self.actor, dst, env)

    def schedule(self, delay_us: int, token) -> None:
        self.world.schedule(self.actor, delay_us, token)

    def service_time(self) -> int:
        lo, hi = self.service_us
        return self.world.rng.randint(lo, hi) if hi > lo else lo

    def trace(self, kind: str, seq: int, vector=None, detail: str = "", node: Optional[int] = None) -> None:
        self.world.trace.record(
            TraceEvent(self.world.now, kind, seq, self.actor if node is None else node,
                       None if vector is None else tuple(vector), detail)
        )


@dataclass
class SimWorld:
    seed: int
    latency: LatencyFn = lambda src, dst, rng: 0
    trace: Trace = field(default_factory=Trace)
    now: int = 0
    actors: dict[int, Any] = field(default_factory=dict)
    blocked: set[tuple[int, int]] = field(default_factory=set)
    delivered: int = 0

    def __post_init__(self):
        self.rng = random.Random(f"net-{self.seed}")
        self._heap: list = []
        self._counter = itertools.count()
        self._last: dict[tuple[int, int], int] = {}

    def add_actor(self, actor_id: int, actor) -> None:
        self.actors[actor_id] = actor

    def send(self, src: int, dst: int, env: Envelope) -> None:
        delay = 0 if src == dst else self.latency(src, dst, self.rng)
        t = max(self.now + delay, self._last.get((src, dst), 0))
        self._last[(src, dst)] = t
        heapq.heappush(self._heap, (t, next(self._counter), "msg", (src, dst, env)))

    def schedule(self, actor: int, delay_us: int, token) -> None:
        heapq.heappush(self._heap, (self.now + max(0, int(delay_us)), next(self._counter), "timer", (actor, token)))

    def partition(self, a: int, b: int, both: bool = True) -> None:
        self.blocked.add((a, b))
        if both:
            self.blocked.add((b, a))

    def heal(self, a: int, b: int) -> None:
        self.blocked.discard((a, b))
        self.blocked.discard((b, a))

    @property
    def pending(self) -> int:
        return len(self._heap)

    def sim_step(self):
        """Deliver the earliest pending event. Returns ``None`` when quiescent."""
        if not self._heap:
            return None
        t, _, kind, body = heapq.heappop(self._heap)
        self.now = t
        if kind == "timer":
            actor, token = body
            self.actors[actor].on_timer(token)
            return TimerFired(t, actor, token)
        src, dst, env = body
        if (src, dst) in self.blocked:
            self.trace.record(TraceEvent(t, "msg_lost", env.tx_seq, dst, None, f"{env.msg_type.name} from={src}"))
            return Delivery(t, src, dst, env, lost=True)
        self.delivered += 1
        self.actors[dst].on_message(env)
        return Delivery(t, src, dst, env)


def sim_step(world: SimWorld):
    return world.sim_step()

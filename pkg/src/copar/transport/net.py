"""Stream-socket runtime: the same node and generator logic over TCP.

Each peer link has one writer task fed by a queue, so per-pair delivery
order is the send order. Incoming connections each get a reader task.
Everything runs on a single asyncio loop, which serializes access to the
actor's counts.
"""

from __future__ import annotations

import asyncio
import logging
import time
from typing import Optional

from ..metrics import Trace, TraceEvent
from .codec import PREFIX_SIZE, DecodeError, Envelope, decode_body, encode_message, frame_length

log = logging.getLogger(__name__)

MAX_DECODE_ERRORS = 3


def wall_us() -> int:
    return time.time_ns() // 1000


class NetContext:
    def __init__(self, runtime: "NetRuntime"):
        self.runtime = runtime

    @property
    def now(self) -> int:
        return wall_us()

    def send(self, dst: int, env: Envelope) -> None:
        self.runtime.send(dst, env)

    def schedule(self, delay_us: int, token) -> None:
        self.runtime.loop.call_later(delay_us / 1e6, self.runtime.dispatch_timer, token)

    def service_time(self) -> int:
        return 0

    def trace(self, kind: str, seq: int, vector=None, detail: str = "", node: Optional[int] = None) -> None:
        self.runtime.trace.record(
            TraceEvent(wall_us(), kind, seq, self.runtime.actor_id if node is None else node,
                       None if vector is None else tuple(vector), detail)
        )


class NetRuntime:
    """Hosts one actor (node or generator) behind a TCP listener."""

    def __init__(self, cfg, actor_id: int, trace: Optional[Trace] = None, connect_timeout: float = 1.0):
        self.cfg = cfg
        self.actor_id = actor_id
        self.trace = trace or Trace()
        self.connect_timeout = connect_timeout
        self.actor = None
        self.loop: Optional[asyncio.AbstractEventLoop] = None
        self.server: Optional[asyncio.AbstractServer] = None
        self.fatal: Optional[asyncio.Future] = None
        self._queues: dict[int, asyncio.Queue] = {}
        self._writers: dict[int, asyncio.Task] = {}
        self._readers: set[asyncio.Task] = set()
        self.lost = 0

    def attach(self, actor) -> None:
        self.actor = actor

    async def start(self) -> None:
        self.loop = asyncio.get_running_loop()
        self.fatal = self.loop.create_future()
        spec = self.cfg.address_of(self.actor_id)
        self.server = await asyncio.start_server(self._serve, spec.host, spec.port)

    @property
    def port(self) -> int:
        return self.server.sockets[0].getsockname()[1]

    async def close(self) -> None:
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()
        for task in [*self._writers.values(), *self._readers]:
            task.cancel()
        await asyncio.gather(*self._writers.values(), *self._readers, return_exceptions=True)

    def _guard(self, fn, *args) -> None:
        try:
            fn(*args)
        except Exception as exc:  # surfaced through self.fatal
            log.exception("actor %s failed", self.actor_id)
            if not self.fatal.done():
                self.fatal.set_exception(exc)

    def dispatch_timer(self, token) -> None:
        self._guard(self.actor.on_timer, token)

    def deliver(self, env: Envelope) -> None:
        self._guard(self.actor.on_message, env)

    def send(self, dst: int, env: Envelope) -> None:
        if dst == self.actor_id:
            self.loop.call_soon(self.deliver, env)
            return
        queue = self._queues.get(dst)
        if queue is None:
            queue = self._queues[dst] = asyncio.Queue()
            self._writers[dst] = self.loop.create_task(self._writer(dst, queue))
        queue.put_nowait(encode_message(env))

    async def _writer(self, dst: int, queue: asyncio.Queue) -> None:
        writer = None
        while True:
            frame = await queue.get()
            try:
                if writer is None:
                    spec = self.cfg.address_of(dst)
                    _, writer = await asyncio.wait_for(
                        asyncio.open_connection(spec.host, spec.port), self.connect_timeout
                    )
                writer.write(frame)
                await writer.drain()
            except (OSError, asyncio.TimeoutError) as exc:
                # unreachable peer: the message is lost, as in the simulator
                self.lost += 1
                log.debug("link %s->%s down: %s", self.actor_id, dst, exc)
                if writer is not None:
                    writer.close()
                writer = None

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        task = asyncio.current_task()
        self._readers.add(task)
        errors = 0
        try:
            while True:
                prefix = await reader.readexactly(PREFIX_SIZE)
                try:
                    body = await reader.readexactly(frame_length(prefix))
                    env = decode_body(body)
                except DecodeError as exc:
                    errors += 1
                    log.warning("bad frame on link to %s: %s", self.actor_id, exc)
                    if errors >= MAX_DECODE_ERRORS:
                        break
                    continue
                self.deliver(env)
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            self._readers.discard(task)
            writer.close()


async def serve_node(cfg, node_id: int, trace: Trace, stop: Optional[asyncio.Event] = None) -> NetRuntime:
    from ..node import Node

    runtime = NetRuntime(cfg, node_id, trace)
    runtime.attach(Node(node_id, cfg, NetContext(runtime)))
    await runtime.start()
    stop = stop or asyncio.Event()
    waiter = asyncio.ensure_future(stop.wait())
    try:
        await asyncio.wait([waiter, runtime.fatal], return_when=asyncio.FIRST_COMPLETED)
        if runtime.fatal.done():
            runtime.fatal.result()
    finally:
        waiter.cancel()
        await runtime.close()
    return runtime


async def drive(cfg, trace: Trace, poll: float = 0.05) -> NetRuntime:
    """Run the generator until every transaction is finalized plus the drain period."""
    from ..workload import GENERATOR_ID, Generator

    runtime = NetRuntime(cfg, GENERATOR_ID, trace)
    gen = Generator(cfg, NetContext(runtime))
    runtime.attach(gen)
    await runtime.start()
    try:
        gen.start()
        while not gen.done:
            if runtime.fatal.done():
                runtime.fatal.result()
            await asyncio.sleep(poll)
        await asyncio.sleep(cfg.timeouts.drain_ms / 1000)
    finally:
        await runtime.close()
    runtime.generator = gen
    return runtime

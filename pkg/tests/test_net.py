"""Networked runtime over localhost sockets."""

import asyncio
import socket

from copar.metrics import Trace, iter_kind, merge_traces, summarize

from conftest import make_cfg


def free_ports(k):
    socks = [socket.socket() for _ in range(k)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def net_cfg(n=3, total_tx=30):
    ports = free_ports(n + 1)
    return make_cfg(
        n=n,
        R=(60,),
        total_tx=total_tx,
        rate=200,
        nodes=[{"id": j, "port": ports[j]} for j in range(1, n + 1)],
        generator={"port": ports[0]},
        service={"min_ms": 0, "max_ms": 0},
        timeouts={"drain_ms": 200, "prepare_ms": 1000, "commit_ms": 1000},
    )


async def _run(cfg):
    from copar.transport.net import drive, serve_node

    stop = asyncio.Event()
    traces = {j: Trace() for j in cfg.node_ids}
    servers = [asyncio.create_task(serve_node(cfg, j, traces[j], stop)) for j in cfg.node_ids]
    await asyncio.sleep(0.1)
    gen_trace = Trace()
    runtime = await asyncio.wait_for(drive(cfg, gen_trace), 30)
    stop.set()
    runtimes = await asyncio.gather(*servers)
    return runtime, runtimes, [gen_trace, *traces.values()]


def test_networked_run_agrees():
    cfg = net_cfg()
    gen_rt, runtimes, traces = asyncio.run(_run(cfg))
    nodes = [rt.actor for rt in runtimes]
    assert len({n.counts.P for n in nodes}) == 1
    merged = merge_traces(traces)
    decided = [e.seq for e in merged.events if e.kind in ("committed", "violation")]
    assert sorted(decided) == list(range(1, cfg.total_tx + 1))
    committed = set(iter_kind(merged, "committed"))
    P = cfg.R[0] + sum(gen_rt.generator.issued[e.seq].delta[0] for e in committed)
    assert nodes[0].counts.P == (P,)
    rep = summarize(merged)
    assert rep.total == cfg.total_tx and not rep.partial


def test_garbage_frames_do_not_crash_node():
    cfg = net_cfg(n=1, total_tx=1)

    async def main():
        from copar.transport.net import serve_node

        stop = asyncio.Event()
        task = asyncio.create_task(serve_node(cfg, 1, Trace(), stop))
        await asyncio.sleep(0.1)
        _, w = await asyncio.open_connection("127.0.0.1", cfg.node(1).port)
        w.write(b"\x00\x00\x00\x03abc" * 4)
        await w.drain()
        w.close()
        await asyncio.sleep(0.1)
        assert not task.done()
        stop.set()
        return await task

    rt = asyncio.run(main())
    assert not rt.fatal.done()

"""Full simulated runs: generator plus nodes on a ``SimWorld``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .node import Node
from .transport.sim import SimContext, SimWorld
from .workload import GENERATOR_ID, Generator, RunConfig


def latency_model(cfg: RunConfig):
    """Uniform per-link latency: LAN range within a site, WAN range across."""
    lan = tuple(int(round(v * 1000)) for v in cfg.latency.lan_ms)
    wan = tuple(int(round(v * 1000)) for v in cfg.latency.wan_ms)
    sites = {GENERATOR_ID: cfg.generator.site, **{n.id: n.site for n in cfg.nodes}}

    def latency(src: int, dst: int, rng) -> int:
        lo, hi = lan if sites[src] == sites[dst] else wan
        return rng.randint(lo, hi)

    return latency


@dataclass
class SimResult:
    cfg: RunConfig
    world: SimWorld
    nodes: dict[int, Node]
    generator: Generator
    events: int
    quiescent: bool

    @property
    def trace(self):
        return self.world.trace


def build(cfg: RunConfig, latency=None, script=None) -> tuple[SimWorld, dict[int, Node], Generator]:
    world = SimWorld(cfg.seed, latency or latency_model(cfg))
    world.trace.header = cfg.to_dict()
    service = tuple(int(round(v * 1000)) for v in cfg.latency.service_ms)
    nodes = {}
    for spec in cfg.nodes:
        nodes[spec.id] = Node(spec.id, cfg, SimContext(world, spec.id, service))
        world.add_actor(spec.id, nodes[spec.id])
    gen = Generator(cfg, SimContext(world, GENERATOR_ID), script=script)
    world.add_actor(GENERATOR_ID, gen)
    return world, nodes, gen


def run_simulation(
    cfg: RunConfig,
    *,
    latency=None,
    script=None,
    after_step: Optional[Callable[[SimWorld, dict[int, Node]], None]] = None,
    max_events: int = 5_000_000,
) -> SimResult:
    """Run until quiescence, or until the drain period after the last
    transaction finalizes (a dropped node may keep retrying forever)."""
    world, nodes, gen = build(cfg, latency, script)
    gen.start()
    drain_us = int(round(cfg.timeouts.drain_ms * 1000))
    events = 0
    quiescent = False
    while events < max_events:
        if gen.done and world.now >= gen.done_at + drain_us:
            break
        if world.sim_step() is None:
            quiescent = True
            break
        events += 1
        if after_step is not None:
            after_step(world, nodes)
    return SimResult(cfg, world, nodes, gen, events, quiescent)

"""Run configuration and the transaction generator.

A run is described by a small XML document::

    <run seed="1" total_tx="200" rate="5" cost_bound="1.16">
      <resources>200</resources>
      <requests min="3" max="9" return_fraction="0.3"/>
      <donations min="3" max="10" fraction="0.09"/>
      <nodes>
        <node id="1" host="127.0.0.1" port="7101" site="R"/>
        ...
      </nodes>
    </run>

The same fields may be given as a JSON object (see ``RunConfig.to_dict``).
"""

from __future__ import annotations

import dataclasses
import json
import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .core import ConfigurationError, Transaction, TxKind, cost_bound, vector
from .faults import FailurePlan, majority_reachable

GENERATOR_ID = 0


@dataclass(frozen=True)
class NodeSpec:
    id: int
    host: str = "127.0.0.1"
    port: int = 0
    site: str = "R"


@dataclass(frozen=True)
class Timeouts:
    prepare_ms: float = 2000
    commit_ms: float = 2000
    retry_ms: float = 2000
    monitor_ms: float = 10000
    ping_ms: float = 2000
    drain_ms: float = 5000


@dataclass(frozen=True)
class Latency:
    lan_ms: tuple[float, float] = (1, 20)
    wan_ms: tuple[float, float] = (50, 1500)
    service_ms: tuple[float, float] = (1, 5)


@dataclass(frozen=True)
class RunConfig:
    nodes: tuple[NodeSpec, ...]
    R: tuple[int, ...]
    c: Fraction
    total_tx: int
    rate: float
    request_range: tuple[int, int] = (3, 9)
    donation_range: tuple[int, int] = (3, 10)
    donation_fraction: Fraction = Fraction(9, 100)
    return_fraction: Fraction = Fraction(3, 10)
    seed: int = 1
    failure: FailurePlan = FailurePlan()
    timeouts: Timeouts = Timeouts()
    latency: Latency = Latency()
    generator: NodeSpec = NodeSpec(GENERATOR_ID)
    legacy_charge: bool = False

    @property
    def m(self) -> int:
        return len(self.R)

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes)

    def node(self, node_id: int) -> NodeSpec:
        for spec in self.nodes:
            if spec.id == node_id:
                return spec
        raise KeyError(node_id)

    def site_of(self, actor: int) -> str:
        return self.address_of(actor).site

    def address_of(self, actor: int) -> NodeSpec:
        return self.generator if actor == GENERATOR_ID else self.node(actor)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        """Canonical JSON-compatible form; round-trips through ``parse_run_config``."""
        return {
            "seed": self.seed,
            "total_tx": self.total_tx,
            "rate": self.rate,
            "cost_bound": str(self.c),
            "legacy_charge": self.legacy_charge,
            "resources": list(self.R),
            "requests": {
                "min": self.request_range[0],
                "max": self.request_range[1],
                "return_fraction": str(self.return_fraction),
            },
            "donations": {
                "min": self.donation_range[0],
                "max": self.donation_range[1],
                "fraction": str(self.donation_fraction),
            },
            "nodes": [dataclasses.asdict(n) for n in self.nodes],
            "generator": {"host": self.generator.host, "port": self.generator.port, "site": self.generator.site},
            "latency": {
                "lan_min_ms": self.latency.lan_ms[0],
                "lan_max_ms": self.latency.lan_ms[1],
                "wan_min_ms": self.latency.wan_ms[0],
                "wan_max_ms": self.latency.wan_ms[1],
            },
            "service": {"min_ms": self.latency.service_ms[0], "max_ms": self.latency.service_ms[1]},
            "timeouts": dataclasses.asdict(self.timeouts),
            "failure": (
                {
                    "target": self.failure.target,
                    "pessimistic_threshold": self.failure.pessimistic_counter_threshold,
                    "generator_threshold": self.failure.generator_counter_threshold,
                }
                if self.failure.enabled
                else None
            ),
        }


def _xml_to_dict(root: ET.Element) -> dict:
    if root.tag != "run":
        raise ConfigurationError(f"root element must be <run>, got <{root.tag}>")
    doc: dict[str, Any] = dict(root.attrib)
    for child in root:
        if child.tag == "resources":
            doc["resources"] = (child.text or "").split()
        elif child.tag == "nodes":
            doc["nodes"] = [dict(n.attrib) for n in child if n.tag == "node"]
        elif child.tag in ("requests", "donations", "generator", "latency", "service", "timeouts", "failure"):
            doc[child.tag] = dict(child.attrib)
        else:
            raise ConfigurationError(f"unknown element <{child.tag}>")
    return doc


def _get(doc: Mapping, key: str, conv, default=dataclasses.MISSING, where: str = ""):
    name = f"{where}.{key}" if where else key
    if key not in doc or doc[key] is None:
        if default is dataclasses.MISSING:
            raise ConfigurationError(f"missing required field '{name}'")
        return default
    try:
        return conv(doc[key])
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigurationError(f"invalid value for '{name}': {doc[key]!r}") from exc


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes"):
        return True
    if s in ("0", "false", "no"):
        return False
    raise ValueError(v)


def _frac(v) -> Fraction:
    return Fraction(str(v))


def _range(sub: Mapping, where: str, lo_key: str, hi_key: str, default, conv=int) -> tuple:
    lo = _get(sub, lo_key, conv, default[0], where)
    hi = _get(sub, hi_key, conv, default[1], where)
    if lo > hi:
        raise ConfigurationError(f"empty range {where}: {lo} > {hi}")
    return (lo, hi)


def parse_run_config(document) -> RunConfig:
    """Validate a run configuration given as XML text, JSON text or a mapping."""
    if isinstance(document, (str, bytes)):
        text = document.decode() if isinstance(document, bytes) else document
        stripped = text.lstrip()
        if stripped.startswith("<"):
            try:
                doc = _xml_to_dict(ET.fromstring(text))
            except ET.ParseError as exc:
                raise ConfigurationError(f"malformed XML: {exc}") from exc
        else:
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"malformed JSON: {exc}") from exc
    elif isinstance(document, Mapping):
        doc = dict(document)
    else:
        raise ConfigurationError(f"cannot parse configuration from {type(document).__name__}")

    raw_nodes = doc.get("nodes")
    if not raw_nodes:
        raise ConfigurationError("missing required field 'nodes'")
    nodes = []
    for i, n in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        spec = NodeSpec(
            id=_get(n, "id", int, where=where),
            host=_get(n, "host", str, "127.0.0.1", where),
            port=_get(n, "port", int, 0, where),
            site=_get(n, "site", str, "R", where),
        )
        if spec.id <= GENERATOR_ID:
            raise ConfigurationError(f"{where}.id must be positive (0 is the generator)")
        nodes.append(spec)
    if len({n.id for n in nodes}) != len(nodes):
        raise ConfigurationError("duplicate node ids in 'nodes'")

    R = _get(doc, "resources", lambda v: vector([int(x) for x in (v.split() if isinstance(v, str) else v)]))
    if any(r < 0 for r in R):
        raise ConfigurationError(f"'resources' must be non-negative, got {R}")
    try:
        c = cost_bound(_get(doc, "cost_bound", str))
    except ConfigurationError as exc:
        raise ConfigurationError(f"invalid value for 'cost_bound': {exc}") from exc
    total_tx = _get(doc, "total_tx", int)
    if total_tx < 1:
        raise ConfigurationError("'total_tx' must be >= 1")
    rate = _get(doc, "rate", float)
    if rate <= 0:
        raise ConfigurationError("'rate' must be > 0")

    req = doc.get("requests") or {}
    don = doc.get("donations") or {}
    request_range = _range(req, "requests", "min", "max", (3, 9))
    donation_range = _range(don, "donations", "min", "max", (3, 10))
    if request_range[0] < 0 or donation_range[0] < 0:
        raise ConfigurationError("request and donation magnitudes must be >= 0")
    donation_fraction = _get(don, "fraction", _frac, Fraction(9, 100), "donations")
    return_fraction = _get(req, "return_fraction", _frac, Fraction(3, 10), "requests")
    for name, value in (("donations.fraction", donation_fraction), ("requests.return_fraction", return_fraction)):
        if not 0 <= value <= 1:
            raise ConfigurationError(f"'{name}' must lie in [0, 1], got {value}")

    lat = doc.get("latency") or {}
    svc = doc.get("service") or {}
    latency = Latency(
        lan_ms=_range(lat, "latency", "lan_min_ms", "lan_max_ms", (1, 20), float),
        wan_ms=_range(lat, "latency", "wan_min_ms", "wan_max_ms", (50, 1500), float),
        service_ms=_range(svc, "service", "min_ms", "max_ms", (1, 5), float),
    )
    to = doc.get("timeouts") or {}
    defaults = Timeouts()
    timeouts = Timeouts(
        **{
            f.name: _get(to, f.name, float, getattr(defaults, f.name), "timeouts")
            for f in dataclasses.fields(Timeouts)
        }
    )
    if any(getattr(timeouts, f.name) <= 0 for f in dataclasses.fields(Timeouts)):
        raise ConfigurationError("timeouts must be positive")

    gen = doc.get("generator") or {}
    fail = doc.get("failure")
    if fail:
        failure = FailurePlan(
            target=_get(fail, "target", int, where="failure"),
            pessimistic_counter_threshold=_get(fail, "pessimistic_threshold", int, 50, "failure"),
            generator_counter_threshold=_get(fail, "generator_threshold", int, 25, "failure"),
            enabled=_get(fail, "enabled", _bool, True, "failure"),
        )
    else:
        failure = FailurePlan()
    failure.validate(total_tx, [n.id for n in nodes])

    return RunConfig(
        nodes=tuple(nodes),
        R=R,
        c=c,
        total_tx=total_tx,
        rate=rate,
        request_range=request_range,
        donation_range=donation_range,
        donation_fraction=donation_fraction,
        return_fraction=return_fraction,
        seed=_get(doc, "seed", int, 1),
        failure=failure,
        timeouts=timeouts,
        latency=latency,
        generator=NodeSpec(
            GENERATOR_ID,
            host=_get(gen, "host", str, "127.0.0.1", "generator"),
            port=_get(gen, "port", int, 0, "generator"),
            site=_get(gen, "site", str, "R", "generator"),
        ),
        legacy_charge=_get(doc, "legacy_charge", _bool, False),
    )


def load_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text())


@dataclass
class GeneratorState:
    rng: random.Random
    next_seq: int = 1
    sent: dict[int, int] = field(default_factory=dict)
    dropped: set[int] = field(default_factory=set)
    reroute_parity: int = 0

    @classmethod
    def fresh(cls, seed: int) -> "GeneratorState":
        return cls(rng=random.Random(seed))


def next_transaction(state: GeneratorState, cfg: RunConfig) -> Transaction:
    """Draw the next transaction. The owner is the *intended* owner, chosen
    uniformly from all configured nodes; routing around dropped nodes is the
    caller's job (see ``reroute_target``)."""
    if state.next_seq > cfg.total_tx:
        raise ConfigurationError(f"all {cfg.total_tx} transactions already generated")
    rng = state.rng
    if rng.random() < cfg.donation_fraction:
        lo, hi = cfg.donation_range
        kind = TxKind.ADDITION
        delta = tuple(rng.randint(lo, hi) for _ in range(cfg.m))
    else:
        lo, hi = cfg.request_range
        kind = TxKind.REQUEST
        sign = 1 if rng.random() < cfg.return_fraction else -1
        delta = tuple(sign * rng.randint(lo, hi) for _ in range(cfg.m))
    owner = rng.choice(cfg.node_ids)
    tx = Transaction(seq=state.next_seq, owner=owner, delta=delta, kind=kind)
    state.next_seq += 1
    return tx


def reroute_target(cfg: RunConfig, state: GeneratorState, intended: int) -> Optional[int]:
    """Alternate between the ring neighbours downstream and upstream of a
    dropped node. Returns ``None`` when no live node remains."""
    ring = cfg.node_ids
    live = [j for j in ring if j not in state.dropped]
    if not live:
        return None
    if intended not in state.dropped:
        return intended
    step = 1 if state.reroute_parity == 0 else -1
    state.reroute_parity ^= 1
    i = ring.index(intended)
    for hop in range(1, len(ring)):
        candidate = ring[(i + step * hop) % len(ring)]
        if candidate not in state.dropped:
            return candidate
    return None


@dataclass(frozen=True)
class MonitorAction:
    kind: str  # "none", "wait" or "replace"
    coordinator: Optional[int] = None
    pool: tuple[int, ...] = ()


def monitor_coordinator(
    initial: Sequence[int],
    stuck: int,
    responses: Optional[Mapping[int, Sequence[int]]],
    timed_out: bool = True,
) -> MonitorAction:
    """Generator-side reaction to a coordinator that stopped making progress.

    ``responses`` maps each node that answered a ping to the nodes it
    considers inactive. The stuck coordinator and anything a responder has
    classified inactive are excluded from the new group; the lowest
    remaining id takes over.
    """
    if not timed_out:
        return MonitorAction("none")
    responses = responses or {}
    excluded = {stuck}
    for inactive in responses.values():
        excluded.update(inactive)
    pool = tuple(sorted(j for j in responses if j not in excluded and j in initial))
    if not majority_reachable(len(initial), len(pool)):
        return MonitorAction("wait", pool=pool)
    return MonitorAction("replace", coordinator=pool[0], pool=pool)


class Generator:
    """Issues transactions at the configured rate and watches coordinators.

    Like ``Node`` this is I/O-free and driven through a runtime context.
    """

    def __init__(self, cfg: RunConfig, ctx, script: Optional[Sequence[Transaction]] = None):
        from .transport.codec import MsgType, make

        self._make, self._MsgType = make, MsgType
        self.cfg = cfg
        self.ctx = ctx
        self.state = GeneratorState.fresh(cfg.seed)
        self.owner_of: dict[int, int] = {}
        self.issued: dict[int, Transaction] = {}
        self.submitted_at: dict[int, int] = {}
        self.finalized: set[int] = set()
        self.last_progress = 0
        self.done_at: Optional[int] = None
        self.held: Optional[Transaction] = None
        self.pinging = False
        self.ping_responses: dict[int, tuple[int, ...]] = {}
        self.monitor_armed = False
        self.interval_us = int(round(1_000_000 / cfg.rate))
        self.monitor_us = int(round(cfg.timeouts.monitor_ms * 1000))
        self.script = list(script) if script is not None else None
        if self.script is not None and len(self.script) != cfg.total_tx:
            raise ConfigurationError(f"script has {len(self.script)} transactions, total_tx is {cfg.total_tx}")

    @property
    def done(self) -> bool:
        return self.done_at is not None

    def start(self) -> None:
        self.ctx.schedule(0, ("gen",))

    def on_timer(self, token) -> None:
        if token[0] == "gen":
            self._emit()
        elif token[0] == "monitor":
            self._monitor()
        elif token[0] == "ping_done":
            self._ping_done(token[1])

    def on_message(self, env) -> None:
        if env.msg_type is self._MsgType.REMOVE_CHILD:
            if env.tx_seq not in self.finalized:
                self.finalized.add(env.tx_seq)
                self.last_progress = self.ctx.now
                if len(self.finalized) == self.cfg.total_tx:
                    self.done_at = self.ctx.now
        elif env.msg_type is self._MsgType.PING and env["reply"]:
            self.ping_responses[env.sender] = env["inactive"]

    def _emit(self) -> None:
        tx = self.held or self._draw()
        owner = reroute_target(self.cfg, self.state, tx.owner)
        if owner is None:
            self.held = tx
            self.ctx.schedule(self.monitor_us, ("gen",))
            return
        self.held = None
        label = "addition" if tx.kind is TxKind.ADDITION else ("return" if not tx.consumes else "request")
        self.owner_of[tx.seq] = owner
        self.issued[tx.seq] = tx
        self.submitted_at[tx.seq] = self.ctx.now
        self.ctx.trace("submitted", tx.seq, tx.delta, detail=label, node=owner)
        self.ctx.send(
            owner,
            self._make(self._MsgType.SUBMIT, GENERATOR_ID, tx.seq, kind=int(tx.kind), owner=owner, delta=tx.delta, takeover=0, exclude=()),
        )
        self.state.sent[owner] = self.state.sent.get(owner, 0) + 1
        plan = self.cfg.failure
        if (
            plan.enabled
            and owner == plan.target
            and owner not in self.state.dropped
            and self.state.sent[owner] >= plan.generator_counter_threshold
        ):
            self.state.dropped.add(owner)
            self.ctx.trace("dropped", tx.seq, detail=f"peer={owner} by=generator")
        if self.state.next_seq <= self.cfg.total_tx:
            self.ctx.schedule(self.interval_us, ("gen",))
        self._arm_monitor()

    def _draw(self) -> Transaction:
        if self.script is None:
            return next_transaction(self.state, self.cfg)
        tx = self.script[self.state.next_seq - 1]
        if tx.seq != self.state.next_seq:
            raise ConfigurationError(f"script out of order at {tx.seq}")
        self.state.next_seq += 1
        return tx

    def _arm_monitor(self) -> None:
        if not self.monitor_armed and not self.done:
            self.monitor_armed = True
            self.ctx.schedule(max(1, self.monitor_us // 2), ("monitor",))

    def _lowest_open(self) -> Optional[int]:
        for seq in sorted(self.owner_of):
            if seq not in self.finalized:
                return seq
        return None

    def _monitor(self) -> None:
        self.monitor_armed = False
        if self.done:
            return
        low = self._lowest_open()
        if low is not None and not self.pinging:
            due = max(self.last_progress, self.submitted_at[low])
            if self.ctx.now - due >= self.monitor_us:
                self.pinging = True
                self.ping_responses = {}
                ping = self._make(self._MsgType.PING, GENERATOR_ID, 0, reply=0, inactive=())
                for j in self.cfg.node_ids:
                    self.ctx.send(j, ping)
                self.ctx.schedule(int(round(self.cfg.timeouts.ping_ms * 1000)), ("ping_done", low))
        self._arm_monitor()

    def _ping_done(self, low: int) -> None:
        self.pinging = False
        if low in self.finalized:
            return
        stuck = self.owner_of[low]
        action = monitor_coordinator(self.cfg.node_ids, stuck, self.ping_responses)
        if action.kind != "replace":
            return
        new = action.coordinator
        self.state.dropped.add(stuck)
        self.last_progress = self.ctx.now
        for seq in sorted(self.owner_of):
            if seq in self.finalized or self.owner_of[seq] != stuck:
                continue
            tx = self.issued[seq]
            self.owner_of[seq] = new
            self.ctx.trace("takeover", seq, tx.delta, detail=f"from={stuck}", node=new)
            self.ctx.send(
                new,
                self._make(
                    self._MsgType.SUBMIT,
                    GENERATOR_ID,
                    seq,
                    kind=int(tx.kind),
                    owner=new,
                    delta=tx.delta,
                    takeover=1,
                    exclude=(stuck,),
                ),
            )

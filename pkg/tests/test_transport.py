import struct

import pytest

from copar.transport import DecodeError, EncodeError, MsgType, decode_message, encode_message, make
from copar.transport.codec import MAX_FRAME, PREFIX_SIZE, decode_body, frame_length
from copar.transport.sim import Delivery, SimWorld, TimerFired


def test_roundtrip_prepare():
    env = make(MsgType.PREPARE, 3, 42, kind=0, delta=[-5, 2], p_digest=[100, 7], participants=[1, 2, 3], attempt=2)
    assert decode_message(encode_message(env)) == env
    assert env["participants"] == (1, 2, 3)


def test_make_checks_fields():
    with pytest.raises(EncodeError):
        make(MsgType.ABORT, 1, 1)
    with pytest.raises(EncodeError):
        make(MsgType.ABORT, 1, 1, attempt=1, extra=2)


def test_encode_rejects_out_of_range():
    with pytest.raises(EncodeError):
        encode_message(make(MsgType.OPT_REPLY, 1, 1, decision=300))
    with pytest.raises(EncodeError):
        encode_message(make(MsgType.OPT_REPORT, -1, 1, delta=[1]))


def test_decode_rejects_trailing_bytes():
    frame = encode_message(make(MsgType.ABORT, 1, 1, attempt=1))
    body = frame[PREFIX_SIZE:] + b"\x00"
    with pytest.raises(DecodeError):
        decode_body(body)


def test_frame_length_limit():
    with pytest.raises(DecodeError):
        frame_length(struct.pack("!I", MAX_FRAME + 1))


class Recorder:
    def __init__(self, world, me):
        self.world, self.me, self.got = world, me, []

    def on_message(self, env):
        self.got.append((self.world.now, env.tx_seq))

    def on_timer(self, token):
        self.got.append((self.world.now, token))


def _world(seed=1):
    world = SimWorld(seed, latency=lambda s, d, rng: rng.randint(1, 1000))
    for a in (1, 2):
        world.add_actor(a, Recorder(world, a))
    return world


def test_per_pair_fifo():
    world = _world()
    for seq in range(1, 50):
        world.send(1, 2, make(MsgType.ABORT, 1, seq, attempt=0))
    while world.sim_step() is not None:
        pass
    got = world.actors[2].got
    assert [s for _, s in got] == list(range(1, 50))
    assert all(a[0] <= b[0] for a, b in zip(got, got[1:]))


def test_timers_and_partition():
    world = _world()
    world.schedule(1, 500, "tick")
    world.partition(1, 2)
    world.send(1, 2, make(MsgType.ABORT, 1, 9, attempt=0))
    steps = []
    while (s := world.sim_step()) is not None:
        steps.append(s)
    assert any(isinstance(s, TimerFired) and s.token == "tick" for s in steps)
    assert any(isinstance(s, Delivery) and s.lost for s in steps)
    assert world.actors[2].got == []
    assert [e.kind for e in world.trace.events] == ["msg_lost"]
    world.heal(1, 2)
    world.send(1, 2, make(MsgType.ABORT, 1, 10, attempt=0))
    world.sim_step()
    assert world.actors[2].got[-1][1] == 10


def test_same_seed_same_schedule():
    def run(seed):
        w = _world(seed)
        for seq in range(1, 20):
            w.send(1 + seq % 2, 2 - seq % 2, make(MsgType.ABORT, 1, seq, attempt=0))
        out = []
        while (s := w.sim_step()) is not None:
            out.append((s.time_us, s.dst, s.envelope.tx_seq))
        return out

    assert run(4) == run(4)
    assert run(4) != run(5)

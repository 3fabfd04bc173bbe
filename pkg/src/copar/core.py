"""Domain types shared by every part of the system."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

Vector = tuple[int, ...]


class ConfigurationError(ValueError):
    """Raised for invalid run parameters."""


class ProtocolError(RuntimeError):
    """Raised when a message or operation violates protocol preconditions."""


class ConsistencyFault(RuntimeError):
    """Permanent counts diverged between replicas. Always an implementation bug."""


class TxKind(enum.IntEnum):
    REQUEST = 0  # requests and returns; sign of the delta tells them apart
    ADDITION = 1


class TxState(enum.Enum):
    PENDING = "pending"
    COMMITTED = "committed"
    VIOLATION = "violation"
    UNDONE = "undone"


def vector(values: Sequence[int]) -> Vector:
    out = tuple(int(v) for v in values)
    if not out:
        raise ConfigurationError("resource vectors need at least one entry")
    return out


def add(a: Vector, b: Vector) -> Vector:
    if len(a) != len(b):
        raise ProtocolError(f"vector length mismatch: {len(a)} != {len(b)}")
    return tuple(x + y for x, y in zip(a, b))


def sub(a: Vector, b: Vector) -> Vector:
    if len(a) != len(b):
        raise ProtocolError(f"vector length mismatch: {len(a)} != {len(b)}")
    return tuple(x - y for x, y in zip(a, b))


def neg(a: Vector) -> Vector:
    return tuple(-x for x in a)


def round_half_up(value: Fraction) -> int:
    """Round an exact rational to the nearest integer, halves going up."""
    value = Fraction(value)
    return (value.numerator * 2 + value.denominator) // (value.denominator * 2)


def cost_bound(c) -> Fraction:
    """Parse a cost bound exactly. Strings like ``"1.16"`` stay decimal-exact."""
    try:
        frac = Fraction(str(c)) if not isinstance(c, Fraction) else c
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigurationError(f"invalid cost bound {c!r}") from exc
    if frac < 1:
        raise ConfigurationError(f"cost bound must be >= 1, got {c}")
    return frac


@dataclass(frozen=True)
class Transaction:
    seq: int
    owner: int
    delta: Vector
    kind: TxKind = TxKind.REQUEST

    def __post_init__(self):
        if self.seq < 1:
            raise ProtocolError(f"sequence numbers start at 1, got {self.seq}")
        if self.kind is TxKind.ADDITION and any(r < 0 for r in self.delta):
            raise ProtocolError(f"addition {self.seq} has a negative entry")

    @property
    def consumes(self) -> bool:
        return any(r < 0 for r in self.delta)


@dataclass
class NodeCounts:
    """Permanent and temporary counts at one node, with allocation counters."""

    P: Vector
    T: Vector
    ra_recorded: list[int] = field(default_factory=list)
    ra_current: list[int] = field(default_factory=list)
    temp_stopped: list[bool] = field(default_factory=list)

    def __post_init__(self):
        m = len(self.P)
        if len(self.T) != m:
            raise ProtocolError("P and T lengths differ")
        if not self.ra_recorded:
            self.ra_recorded = [0] * m
        if not self.ra_current:
            self.ra_current = [0] * m
        if not self.temp_stopped:
            self.temp_stopped = [False] * m

    @property
    def m(self) -> int:
        return len(self.P)

    def check(self) -> None:
        if any(p < 0 for p in self.P) or any(t < 0 for t in self.T):
            raise ConsistencyFault(f"negative count: P={self.P} T={self.T}")


def initial_budget(P_k: int, c: Fraction, n: int) -> int:
    return round_half_up(Fraction(c) * P_k / n)


def init_counts(R: Sequence[int], n: int, c) -> tuple[Vector, Vector]:
    """Initial (P, T) for every node: P = R and T = round(c * R / n)."""
    if n < 1:
        raise ConfigurationError(f"node count must be >= 1, got {n}")
    R = vector(R)
    if any(r < 0 for r in R):
        raise ConfigurationError(f"initial resources must be non-negative: {R}")
    c = cost_bound(c)
    return R, tuple(initial_budget(r, c, n) for r in R)


def check_all_nonneg(count: Sequence[int], delta: Sequence[int]) -> bool:
    """All-or-nothing admission: every ``count[k] + delta[k]`` must be >= 0."""
    if len(count) != len(delta):
        raise ProtocolError(f"vector length mismatch: {len(count)} != {len(delta)}")
    return all(c + d >= 0 for c, d in zip(count, delta))

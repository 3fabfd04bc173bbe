"""Scripted node drops and the majority rule for the distinguished partition."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Collection, Optional

from .core import ConfigurationError, Vector, initial_budget


@dataclass(frozen=True)
class FailurePlan:
    target: Optional[int] = None
    pessimistic_counter_threshold: int = 50
    generator_counter_threshold: int = 25
    enabled: bool = False

    def validate(self, total_tx: int, nodes: Collection[int]) -> None:
        if not self.enabled:
            return
        if self.target not in nodes:
            raise ConfigurationError(f"failure target {self.target} is not a configured node")
        for name in ("pessimistic_counter_threshold", "generator_counter_threshold"):
            value = getattr(self, name)
            if not 0 < value < total_tx:
                raise ConfigurationError(f"{name}={value} must lie in (0, total_tx={total_tx})")


def should_drop(counter: int, plan: FailurePlan, sender: int) -> bool:
    """Classify ``sender`` inactive once enough rounds have been announced."""
    return plan.enabled and counter >= plan.pessimistic_counter_threshold and sender == plan.target


def majority_reachable(initial_n: int, reachable: int) -> bool:
    if not 0 <= reachable <= initial_n:
        raise ValueError(f"reachable={reachable} outside [0, {initial_n}]")
    return 2 * reachable > initial_n


class NoMajority(RuntimeError):
    pass


def restart_partition(
    survivors: Collection[int], initial_n: int, P: Vector, c: Fraction
) -> dict[int, Vector]:
    """Fresh temporary budgets for the distinguished partition."""
    if not majority_reachable(initial_n, len(survivors)):
        raise NoMajority(f"{len(survivors)} of {initial_n} nodes is not a majority")
    T = tuple(initial_budget(p, c, len(survivors)) for p in P)
    return {j: T for j in sorted(survivors)}

"""Recomputing temporary budgets after permanent processing.

After every commit the coordinator hands each node a new budget
``c * P_k * w_jk`` where ``w_jk`` favours nodes that have allocated more.
Each node then corrects the target for optimistic work it did after the
coordinator took its snapshot.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping, Sequence

from .core import Vector, add, round_half_up

Weights = dict[int, tuple[Fraction, ...]]


def compute_weight(ra_recorded_jk: int, RA_k: int, n: int) -> Fraction:
    if n < 1 or RA_k + n <= 0:
        raise ValueError(f"weight undefined for RA={RA_k}, n={n}")
    return Fraction(ra_recorded_jk + 1, RA_k + n)


def compute_weights(ra_by_node: Mapping[int, Sequence[int]]) -> Weights:
    """Weights for every node in ``ra_by_node`` and every resource type.

    Net allocation counters can go negative when a node mostly handles
    returns; those are floored at zero here so that every weight stays
    positive and each column still sums to exactly one.
    """
    nodes = sorted(ra_by_node)
    n = len(nodes)
    m = len(ra_by_node[nodes[0]])
    floored = {j: [max(0, v) for v in ra_by_node[j]] for j in nodes}
    totals = [sum(floored[j][k] for j in nodes) for k in range(m)]
    return {
        j: tuple(compute_weight(floored[j][k], totals[k], n) for k in range(m))
        for j in nodes
    }


def redistribute(P_k: int, c: Fraction, column: Sequence[Fraction]) -> list[int]:
    """Per-node budget targets for one resource type."""
    return [round_half_up(Fraction(c) * P_k * w) for w in column]


def targets_for(P: Vector, c: Fraction, weights: Weights) -> dict[int, Vector]:
    nodes = sorted(weights)
    per_k = [redistribute(P[k], c, [weights[j][k] for j in nodes]) for k in range(len(P))]
    return {j: tuple(per_k[k][i] for k in range(len(P))) for i, j in enumerate(nodes)}


def stale_adjust(T_target: int, ra_current: int, ra_recorded: int) -> tuple[int, bool]:
    """Correct a budget target for allocations made since its snapshot.

    Returns the new budget and whether temporary processing must stop
    (the corrected value was zero or below).
    """
    raw = T_target - (ra_current - ra_recorded)
    return max(0, raw), raw <= 0


def apply_addition(
    P: Vector, delta: Vector, c: Fraction, weights: Weights
) -> tuple[Vector, dict[int, Vector]]:
    if any(r < 0 for r in delta):
        raise ValueError(f"additions cannot remove resources: {delta}")
    new_P = add(P, delta)
    return new_P, targets_for(new_P, c, weights)

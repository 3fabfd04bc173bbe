from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from copar.core import round_half_up
from copar.reconcile import apply_addition, compute_weight, compute_weights, redistribute, stale_adjust, targets_for

C = Fraction(11, 10)


@pytest.mark.parametrize(
    "ra, RA, n, w",
    [(0, 0, 3, Fraction(1, 3)), (0, 0, 5, Fraction(1, 5)), (30, 60, 3, Fraction(31, 63)), (10, 60, 3, Fraction(11, 63))],
)
def test_compute_weight(ra, RA, n, w):
    assert compute_weight(ra, RA, n) == w


def _oracle_target(P, c, w):
    # decimal-free check: half-up rounding as floor(x + 1/2) on the exact value
    x = c * P * w
    return (x + Fraction(1, 2)).__floor__()


@pytest.mark.parametrize("w, expected", [(Fraction(31, 63), 22), (Fraction(21, 63), 15), (Fraction(11, 63), 8)])
def test_redistribute_worked_example(w, expected):
    assert redistribute(40, C, [w]) == [expected]
    assert _oracle_target(40, C, w) == expected


@pytest.mark.parametrize(
    "target, current, recorded, result",
    [(22, 36, 30, (16, False)), (15, 24, 20, (11, False)), (7, 7, 10, (10, False)), (7, 18, 10, (0, True))],
)
def test_stale_adjust(target, current, recorded, result):
    assert stale_adjust(target, current, recorded) == result


def test_stale_adjust_idempotent_without_drift():
    assert stale_adjust(12, 5, 5) == (12, False)


def test_returns_since_snapshot_raise_budget():
    T, stopped = stale_adjust(7, 2, 10)
    assert T > 7 and not stopped


def test_apply_addition():
    thirds = {j: (Fraction(1, 3),) for j in (1, 2, 3)}
    P, targets = apply_addition((40,), (20,), C, thirds)
    assert P == (60,)
    assert targets == {1: (22,), 2: (22,), 3: (22,)}
    P, targets = apply_addition((40,), (0,), C, thirds)
    assert targets == targets_for((40,), C, thirds)
    P, targets = apply_addition((0,), (9,), Fraction(1), thirds)
    assert targets == {1: (3,), 2: (3,), 3: (3,)}
    with pytest.raises(ValueError):
        apply_addition((1,), (-1,), C, thirds)


ra_tables = st.integers(1, 6).flatmap(
    lambda n: st.integers(1, 3).flatmap(
        lambda m: st.lists(st.lists(st.integers(-50, 500), min_size=m, max_size=m), min_size=n, max_size=n)
    )
)


@given(ra_tables, st.integers(0, 5000), st.sampled_from(["1", "1.1", "1.16", "2"]))
def test_weights_normalized_and_targets_bounded(rows, P_k, c):
    c = Fraction(c)
    weights = compute_weights({j + 1: row for j, row in enumerate(rows)})
    n, m = len(rows), len(rows[0])
    for k in range(m):
        col = [weights[j][k] for j in sorted(weights)]
        assert sum(col) == 1
        assert all(w > 0 for w in col)
        targets = redistribute(P_k, c, col)
        assert all(t >= 0 for t in targets)
        assert abs(sum(targets) - c * P_k) <= Fraction(n, 2)
        assert targets == [round_half_up(c * P_k * w) for w in col]

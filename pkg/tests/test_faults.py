from fractions import Fraction

import pytest

from copar.core import ConfigurationError
from copar.faults import FailurePlan, NoMajority, majority_reachable, restart_partition, should_drop

PLAN = FailurePlan(target=2, enabled=True)


@pytest.mark.parametrize("counter, sender, expected", [(50, 2, True), (49, 2, False), (50, 3, False), (80, 2, True)])
def test_should_drop(counter, sender, expected):
    assert should_drop(counter, PLAN, sender) is expected


def test_disabled_plan_never_drops():
    assert not should_drop(1000, FailurePlan(target=2), 2)


@pytest.mark.parametrize("n, s, ok", [(4, 3, True), (4, 2, False), (6, 4, True), (5, 3, True), (1, 1, True), (2, 1, False)])
def test_majority(n, s, ok):
    assert majority_reachable(n, s) is ok


def test_restart_partition():
    c = Fraction(116, 100)
    T = restart_partition({1, 2, 3}, 4, (84,), c)
    # 1.16 * 84 / 3 = 32.48
    assert (Fraction(116 * 84, 300) + Fraction(1, 2)).__floor__() == 32
    assert T == {1: (32,), 2: (32,), 3: (32,)}
    with pytest.raises(NoMajority):
        restart_partition({1}, 4, (84,), c)


def test_plan_validation():
    FailurePlan(target=2, enabled=True).validate(200, [1, 2, 3])
    with pytest.raises(ConfigurationError):
        FailurePlan(target=9, enabled=True).validate(200, [1, 2, 3])
    with pytest.raises(ConfigurationError):
        FailurePlan(target=2, enabled=True).validate(40, [1, 2, 3])

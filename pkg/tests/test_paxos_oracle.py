"""Exhaustive interleavings of a small Synod instance against a textbook model."""

from functools import lru_cache

import pytest

from paxos_models import explore as _explore

explore = lru_cache(maxsize=None)(_explore)

CONFIGS = [
    (1, 1),  # lone proposer
    (1, 2),  # proposer retries while its old ACCEPTs are in flight
    (2, 1),  # two competing proposers; the later ballot may adopt the rival's value
]


@pytest.mark.parametrize("n_proposers,rounds", CONFIGS)
def test_reachable_decisions_match_reference(n_proposers, rounds):
    gate = explore("gate", n_proposers, rounds)
    ref = explore("textbook", n_proposers, rounds)
    assert gate[2] == ref[2]
    assert gate[1] == ref[1] > 0


def test_competing_proposers_reach_adoption():
    _, _, outcomes = explore("gate", 2, 1)
    # proposer 1 holds the higher ballot and can end up deciding proposer 0's value
    assert ((1, "v0"),) in outcomes
    assert ((1, "v1"),) in outcomes
    assert all(len({v for _, v in o}) <= 1 for o in outcomes)

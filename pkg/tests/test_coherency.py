"""Localness index and coherent grouping checks.

The index oracle is the defining double loop, evaluated in pure Python.
Exactness is checked on dyadic-rational participation values where both
evaluation orders are error free.
"""

import numpy as np
import pytest

from netequiv.coherency import (CoherentGrouping, ParticipationError,
                                group_by_participation, localness_index)


def oracle_localness(p):
    n = len(p)
    out = []
    for g in range(n):
        s = 0.0
        for j in range(p.shape[1]):
            s += (1.0 - p[g, j]) ** n
        out.append(s)
    return out


def test_identity_participation():
    # each of two machines fully owns one mode
    loc = localness_index(np.eye(2))
    assert np.array_equal(loc, np.array([1.0, 1.0]))


def test_single_machine_full_participation():
    assert localness_index(np.array([[1.0]]))[0] == 0.0


def test_uniform_half():
    loc = localness_index(np.full((2, 2), 0.5))
    assert np.allclose(loc, 0.5, rtol=0, atol=0)


def test_matches_double_loop_exactly(rng):
    # one-bit mantissas: every (1 - p)**n is exactly representable, so any
    # correct summation order must agree with the defining loop bit for bit
    for _ in range(20):
        n = int(rng.integers(1, 12))
        m = int(rng.integers(1, 9))
        p = rng.choice([0.0, 0.5, 0.75, 1.0], size=(n, m))
        got = localness_index(p)
        want = oracle_localness(p)
        assert got.tolist() == want, "index must equal the defining sum"


def test_monotone_in_participation(rng):
    # raising any entry can only lower that machine's index
    for _ in range(20):
        n = int(rng.integers(2, 10))
        m = int(rng.integers(1, 6))
        p = rng.uniform(0.0, 0.9, size=(n, m))
        g = int(rng.integers(0, n))
        j = int(rng.integers(0, m))
        bumped = p.copy()
        bumped[g, j] += 0.05
        before = localness_index(p)
        after = localness_index(bumped)
        assert after[g] < before[g]
        others = [k for k in range(n) if k != g]
        assert np.array_equal(after[others], before[others])


def test_row_permutation_equivariance(rng):
    p = rng.uniform(0.0, 1.0, size=(6, 4))
    perm = rng.permutation(6)
    assert np.array_equal(localness_index(p)[perm], localness_index(p[perm]))


def test_validation():
    with pytest.raises(ParticipationError):
        localness_index(np.array([[1.2]]))
    with pytest.raises(ParticipationError):
        localness_index(np.array([[-0.1]]))
    with pytest.raises(ParticipationError):
        localness_index(np.zeros((0, 0)))
    with pytest.raises(ParticipationError):
        group_by_participation(np.array([[0.5]]), tau=0.0)


# ---------------------------------------------------------------------------
# grouping


def ten_machine_fixture():
    """Participation shaped after a 4-group split of ten machines.

    Modes: 0 shared by {4,5,6,7,9}, 1 by {1,8,10}, 2 only {3}, 3 only {2}.
    """
    strong, weak = 0.75, 0.04
    groups = {0: {4, 5, 6, 7, 9}, 1: {1, 8, 10}, 2: {3}, 3: {2}}
    p = np.full((10, 4), weak)
    for j, members in groups.items():
        for gid in members:
            p[gid - 1, j] = strong
    return p, list(range(1, 11))


def test_grouping_reproduces_reference_partition():
    p, ids = ten_machine_fixture()
    grouping = group_by_participation(p, ids, tau=0.1)
    want = {frozenset({4, 5, 6, 7, 9}), frozenset({1, 10, 8}),
            frozenset({3}), frozenset({2})}
    assert grouping.as_sets() == want
    # deterministic numbering: smallest member id first
    assert grouping.groups == ((1, 8, 10), (2,), (3,), (4, 5, 6, 7, 9))


def test_grouping_deterministic_under_row_order():
    p, ids = ten_machine_fixture()
    order = np.array([9, 3, 0, 7, 5, 1, 8, 2, 6, 4])
    shuffled = group_by_participation(p[order], [ids[k] for k in order],
                                      tau=0.1)
    straight = group_by_participation(p, ids, tau=0.1)
    assert shuffled.groups == straight.groups


def test_external_group_selection():
    p, ids = ten_machine_fixture()
    g = group_by_participation(p, ids, tau=0.1)
    g.external_group = 4
    assert g.external_members() == (4, 5, 6, 7, 9)
    with pytest.raises(ValueError):
        CoherentGrouping(groups=g.groups, localness=g.localness, tau=0.1,
                         external_group=9)


def test_tau_splits_marginal_members():
    # participation right at tau counts as strong; just below does not
    p = np.array([[0.10, 0.0], [0.099, 0.0]])
    g = group_by_participation(p, [1, 2], tau=0.1)
    assert g.as_sets() == {frozenset({1}), frozenset({2})}

"""Bulk-criterion marking: minimality, binning and the combined variant."""

from itertools import combinations

import numpy as np
import pytest

from afemkit.errors import StructureError
from afemkit.estimator import make_indicators, subset_total
from afemkit.marking import combined_mark, doerfler_binned, doerfler_min


def brute_force_minimum(eta2, theta):
    """Smallest cardinality of a subset meeting the bulk criterion."""
    target = theta * eta2.sum()
    n = eta2.size
    for m in range(1, n + 1):
        for combo in combinations(range(n), m):
            if eta2[list(combo)].sum() >= target - 1e-12:
                return m
    return n


@pytest.mark.parametrize("mark", [doerfler_min, doerfler_binned])
def test_criterion_satisfied(mark):
    rng = np.random.default_rng(0)
    for _ in range(100):
        eta2 = rng.random(rng.integers(1, 40))
        theta = float(rng.uniform(0.05, 1.0))
        ind = make_indicators(eta2)
        sel = mark(ind, theta)
        assert subset_total(ind, sel) ** 2 >= theta * ind.total2 - 1e-12
        assert len(sel) == len(set(sel))


def test_minimal_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(150):
        eta2 = rng.random(rng.integers(1, 13)) ** 2
        theta = float(rng.uniform(0.05, 0.95))
        sel = doerfler_min(make_indicators(eta2), theta)
        assert len(sel) == brute_force_minimum(eta2, theta)


def test_minimal_with_ties_prefers_smaller_ids():
    ind = make_indicators(np.array([1.0, 1.0, 1.0, 1.0]))
    assert doerfler_min(ind, 0.5) == [0, 1]


def test_binned_within_twice_minimal():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = rng.integers(1, 200)
        # heavy-tailed indicators exercise many bins
        eta2 = rng.random(n) ** rng.integers(1, 6)
        theta = float(rng.uniform(0.05, 0.95))
        ind = make_indicators(eta2)
        minimal = len(doerfler_min(ind, theta))
        binned = doerfler_binned(ind, theta)
        assert subset_total(ind, binned) ** 2 >= theta * ind.total2 - 1e-12
        assert len(binned) <= 2 * minimal


def test_theta_one_marks_all_positive():
    eta2 = np.array([0.5, 0.0, 0.25, 1.0])
    for mark in (doerfler_min, doerfler_binned):
        sel = mark(make_indicators(eta2), 1.0)
        assert sorted(sel) == [0, 2, 3]


def test_zero_indicators_mark_nothing():
    ind = make_indicators(np.zeros(5))
    assert doerfler_min(ind, 0.5) == []
    assert doerfler_binned(ind, 0.5) == []


def test_invalid_theta_rejected():
    ind = make_indicators(np.ones(3))
    for theta in (0.0, -0.5, 1.5):
        with pytest.raises(StructureError):
            doerfler_min(ind, theta)
        with pytest.raises(StructureError):
            doerfler_binned(ind, theta)


def test_negative_indicator_rejected():
    with pytest.raises(StructureError):
        make_indicators(np.array([1.0, -1e-9]))


def test_subset_total_of_empty():
    ind = make_indicators(np.array([1.0, 2.0]))
    assert subset_total(ind, []) == 0.0
    assert subset_total(ind, [0, 1]) == pytest.approx(np.sqrt(3.0))


def test_combined_mark_truncates_to_smaller_set():
    u = make_indicators(np.array([8.0, 4.0, 2.0, 1.0, 1.0]))
    z = make_indicators(np.array([0.1, 0.1, 0.1, 0.1, 15.0]))
    sel = combined_mark(u, z, 0.5)
    mu = doerfler_min(u, 0.5)
    mz = doerfler_min(z, 0.5)
    m = min(len(mu), len(mz))
    assert sel == sorted(set(mu[:m]) | set(mz[:m]))


def test_combined_mark_falls_back_when_one_side_is_zero():
    u = make_indicators(np.array([1.0, 2.0, 3.0]))
    z = make_indicators(np.zeros(3))
    sel = combined_mark(u, z, 0.5)
    assert sel == sorted(doerfler_min(u, 0.5))


def test_combined_mark_requires_matching_lengths():
    with pytest.raises(StructureError):
        combined_mark(make_indicators(np.ones(3)), make_indicators(np.ones(4)), 0.5)


def test_marking_is_deterministic():
    rng = np.random.default_rng(4)
    eta2 = rng.random(50)
    ind = make_indicators(eta2)
    assert doerfler_min(ind, 0.3) == doerfler_min(make_indicators(eta2), 0.3)
    assert doerfler_binned(ind, 0.3) == doerfler_binned(make_indicators(eta2), 0.3)

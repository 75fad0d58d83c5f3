"""Doerfler marking: minimal, binned quasi-minimal, and combined variants."""

from __future__ import annotations

import logging

import numpy as np

from .errors import StructureError
from .estimator import Indicators

log = logging.getLogger(__name__)


def _check_theta(theta: float) -> None:
    if not 0.0 < theta <= 1.0:
        raise StructureError(f"theta must lie in (0, 1], got {theta}")


def _sorted_ids(ind: Indicators) -> np.ndarray:
    """Element ids by descending indicator, ties by smaller id."""
    n = len(ind)
    order = np.lexsort((np.arange(n), -ind.eta2))
    return order


def doerfler_min(ind: Indicators, theta: float) -> list[int]:
    """Smallest set with theta * eta^2 <= sum over the set of eta_T^2.

    Deterministic: among equal indicators the smaller element id wins.
    """
    _check_theta(theta)
    goal = theta * ind.total2
    if goal <= 0.0:
        return []
    order = _sorted_ids(ind)
    csum = np.cumsum(ind.eta2[order])
    goal = min(goal, float(csum[-1]))
    k = int(np.searchsorted(csum, goal)) + 1  # first prefix with sum >= goal
    k = min(k, len(order))
    return [int(i) for i in order[:k]]


def doerfler_binned(ind: Indicators, theta: float) -> list[int]:
    """Linear-time quasi-minimal marking via dyadic binning.

    Whole bins of elements with comparable indicators (within a factor 2)
    are taken from the largest down; inside the threshold bin elements are
    added in id order until the criterion holds.  Since bin members differ
    by less than a factor 2, the result has at most twice the minimal
    cardinality.
    """
    _check_theta(theta)
    goal = theta * ind.total2
    if goal <= 0.0:
        return []
    eta2 = ind.eta2
    pos = np.flatnonzero(eta2 > 0.0)
    top = float(eta2[pos].max())
    # bin index: 0 for (top/2, top], 1 for (top/4, top/2], ...
    with np.errstate(divide="ignore"):
        bins = np.floor(-np.log2(eta2[pos] / top)).astype(np.int64)
    bins = np.clip(bins, 0, 60)
    marked: list[int] = []
    acc = 0.0
    goal_eff = min(goal, float(eta2[pos].sum()))
    for b in range(int(bins.max()) + 1):
        members = pos[bins == b]  # ascending element id
        if members.size == 0:
            continue
        bin_sum = float(eta2[members].sum())
        if acc + bin_sum < goal_eff:
            marked.extend(int(i) for i in members)
            acc += bin_sum
            continue
        for i in members:
            marked.append(int(i))
            acc += float(eta2[i])
            if acc >= goal_eff:
                return marked
        return marked
    return marked


def combined_mark(ind_u: Indicators, ind_z: Indicators, theta: float) -> list[int]:
    """Goal-oriented marking: truncate both Doerfler sets to the smaller
    cardinality (keeping the largest indicators) and take the union.

    When one estimator is identically zero the truncation rule would
    return an empty set and stall the loop; in that degenerate case the
    union of the untruncated sets is used instead (and logged).
    """
    if len(ind_u) != len(ind_z):
        raise StructureError("indicator element sets differ")
    mu = doerfler_min(ind_u, theta)
    mz = doerfler_min(ind_z, theta)
    if (not mu) != (not mz):
        log.warning(
            "combined_mark: one Doerfler set is empty (sizes %d/%d); "
            "falling back to the union of the untruncated sets",
            len(mu),
            len(mz),
        )
        return sorted(set(mu) | set(mz))
    m = min(len(mu), len(mz))
    return sorted(set(mu[:m]) | set(mz[:m]))

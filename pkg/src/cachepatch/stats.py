"""Robust statistics for noisy cache-miss measurements.

Rank-based first quartile, a tie-aware Mann-Whitney U test with an exact
small-sample mode, sentinel drift detection, and coupon-collector coverage
estimates. Everything here is pure and deterministic, so results are
reproducible across runs and platforms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

__all__ = [
    "quartile1",
    "MannWhitneyResult",
    "mann_whitney",
    "DriftReport",
    "drift_check",
    "coverage_probability",
]

# Exact Mann-Whitney enumeration is affordable up to these sizes; beyond
# them the normal approximation is accurate anyway.
EXACT_MAX_SMALLER = 8
EXACT_MAX_TOTAL = 20


def quartile1(samples):
    """Nearest-rank lower quartile: the element at 0-based rank
    floor((n - 1) / 4) of the ascending sort.

    No interpolation, so the result is always one of the inputs and is
    unaffected by inflating any value that sorts above the returned rank.
    This is what makes it a safe summary for measurements polluted by
    large positive outliers.
    """
    ordered = sorted(samples)
    if not ordered:
        raise ValueError("quartile1 requires at least one sample")
    return ordered[(len(ordered) - 1) // 4]


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float
    p_two_sided: float
    method: str  # "exact" or "normal"


def _midranks(pooled):
    """1-based fractional ranks; ties share the mean rank of their block."""
    order = sorted(range(len(pooled)), key=pooled.__getitem__)
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def mann_whitney(a, b):
    """Two-sided Mann-Whitney U test, tie-aware via midranks.

    U is reported for the first sample (number of (a, b) pairs with
    a > b, counting ties as half), so U(a, b) + U(b, a) == len(a) * len(b).

    When min(|a|, |b|) <= 8 and |a| + |b| <= 20 the p-value is exact:
    the U distribution is enumerated over every assignment of the pooled
    values to the two groups. Otherwise the normal approximation with
    tie-corrected variance and continuity correction is used.
    """
    if not a or not b:
        raise ValueError("mann_whitney requires two non-empty samples")
    na, nb = len(a), len(b)
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    u_a = sum(ranks[:na]) - na * (na + 1) / 2.0
    if min(na, nb) <= EXACT_MAX_SMALLER and na + nb <= EXACT_MAX_TOTAL:
        return MannWhitneyResult(u_a, _exact_p(ranks, na, nb, u_a), "exact")
    return MannWhitneyResult(u_a, _normal_p(pooled, na, nb, u_a), "normal")


def _exact_p(ranks, na, nb, u_obs):
    """Exact two-sided p: 2 * P(U <= min(U, na*nb - U)), capped at 1."""
    u_lo = min(u_obs, na * nb - u_obs) + 1e-9  # ranks quantize U to halves
    offset = na * (na + 1) / 2.0
    total = 0
    at_most = 0
    for combo in itertools.combinations(range(na + nb), na):
        u = sum(ranks[i] for i in combo) - offset
        total += 1
        if u <= u_lo:
            at_most += 1
    return min(1.0, 2.0 * at_most / total)


def _normal_p(pooled, na, nb, u_a):
    n = na + nb
    tie_term = 0.0
    for _, group in itertools.groupby(sorted(pooled)):
        t = len(list(group))
        tie_term += t**3 - t
    variance = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return 1.0  # every pooled value tied: the samples are indistinguishable
    z = (abs(u_a - na * nb / 2.0) - 0.5) / math.sqrt(variance)
    if z < 0:
        z = 0.0
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class DriftReport:
    drifting: bool
    worst_ratio: float
    onset_step: int | None


def drift_check(sentinel_history, baseline, tolerance):
    """Flag measurement drift from sentinel re-measurements of a fixed program.

    Each sentinel metric is expressed as a ratio to the warm-up baseline;
    the history is drifting as soon as any ratio leaves
    [1 - tolerance, 1 + tolerance]. ``onset_step`` is the step of the first
    excursion, ``worst_ratio`` the ratio farthest from 1.0.
    """
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    if not sentinel_history:
        raise ValueError("sentinel history must be non-empty")
    if not 0.0 < tolerance < 1.0:
        raise ValueError("tolerance must be in (0, 1)")
    worst = 1.0
    onset = None
    for step, metric in sentinel_history:
        ratio = metric / baseline
        if abs(ratio - 1.0) > abs(worst - 1.0):
            worst = ratio
        if onset is None and not (1.0 - tolerance <= ratio <= 1.0 + tolerance):
            onset = step
    return DriftReport(drifting=onset is not None, worst_ratio=worst, onset_step=onset)


def coverage_probability(n_items, draws):
    """Asymptotic probability that ``draws`` uniform draws over ``n_items``
    coupons collect every coupon at least once: exp(-N * e^(-t/N)).

    This is the same coverage law the search budget inverts; it is exact
    for that inversion but only an approximation of the true coverage
    probability (good to a few tenths of a percent for the sizes used here).
    """
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if draws < 0:
        raise ValueError("draws must be >= 0")
    return math.exp(-n_items * math.exp(-draws / n_items))

"""Paired significance testing for scenario score tables.

The signed-rank test here is self-contained: tied absolute differences share
average ranks, zero differences are dropped, and for n <= 12 the two-sided
p-value comes from the exact sign-flip null distribution (computed by
convolution over the ranks). Above that a normal approximation with the
tie-exact variance Var = sum(r_i^2)/4 is used, without continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 12


class UndefinedTestError(ValueError):
    """Test statistic undefined (e.g. all paired differences are zero)."""


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float      # W+ = sum of ranks of positive differences
    p_value: float
    n_effective: int      # pairs remaining after dropping zero differences
    exact: bool


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_distribution(ranks: np.ndarray) -> tuple[np.ndarray, int]:
    """Null counts of 2*W+ over all sign assignments, by convolution.

    Average ranks are multiples of 1/2, so doubling makes them integers and
    the distribution of 2*W+ lives on 0..2*sum(ranks).
    """
    doubled = np.rint(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts, total


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired scores.

    Zero differences are dropped; ties among |differences| share average
    ranks. The two-sided p-value is the symmetric tail mass
    P(W+ <= w) + P(W+ >= S - w) for w = min(W+, W-), exact for
    n <= 12 effective pairs and normal-approximated above.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need equal-length 1-D paired scores, got {a.shape} and {b.shape}")
    if len(a) < 5:
        raise ValueError(f"need at least 5 pairs, got {len(a)}")

    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero; the test is undefined")

    ranks = _average_ranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    total = float(ranks.sum())  # = n(n+1)/2
    w_min = min(w_plus, total - w_plus)

    if n <= EXACT_MAX_N:
        counts, doubled_total = _exact_distribution(ranks)
        w2 = int(round(2.0 * w_min))
        lower = int(sum(counts[: w2 + 1]))
        upper = int(sum(counts[doubled_total - w2 :]))
        p = (lower + upper) / float(2 ** n)
        return WilcoxonResult(statistic=w_plus, p_value=min(1.0, p), n_effective=n, exact=True)

    mean = total / 2.0
    var = float((ranks ** 2).sum()) / 4.0
    z = (w_plus - mean) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(statistic=w_plus, p_value=min(1.0, p), n_effective=n, exact=False)

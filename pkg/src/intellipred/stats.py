"""Paired Wilcoxon signed-rank test.

Small samples get an exact p-value: the null distribution of the positive
rank sum is counted over all 2**n sign assignments (by convolution over
doubled ranks, which keeps tied half-ranks integral). Larger samples use the
normal approximation with tie and continuity corrections.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 25


class DegenerateDataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float     # sum of ranks of positive differences
    p_value: float
    n: int               # differences kept after zero handling
    zeros: int
    method: str          # "exact", "normal" or "degenerate"
    alternative: str


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + 1 + stop)
        start = stop
    return ranks


def rank_sum_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[w] = number of sign assignments whose doubled positive rank sum is w."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def _tail_probabilities(w2: int, doubled_ranks: np.ndarray) -> tuple[float, float]:
    counts = rank_sum_counts(doubled_ranks)
    denom = float(2 ** len(doubled_ranks))
    upper = int(counts[w2:].sum()) / denom
    lower = int(counts[: w2 + 1].sum()) / denom
    return upper, lower


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(
    a,
    b=None,
    alternative: str = "greater",
    zero_method: str = "wilcox",
    exact_max_n: int = EXACT_MAX_N,
) -> WilcoxonResult:
    """Test whether paired values ``a`` tend to exceed ``b``.

    ``alternative`` is ``"greater"`` (a > b), ``"less"`` or ``"two-sided"``.
    ``zero_method="wilcox"`` drops zero differences before ranking;
    ``"pratt"`` ranks them and then discards their ranks. When every
    difference is zero the p-value is 1 and a :class:`DegenerateDataWarning`
    is emitted.
    """
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    if zero_method not in ("wilcox", "pratt"):
        raise ValueError(f"unknown zero_method {zero_method!r}")
    a = np.asarray(a, dtype=np.float64)
    d = a if b is None else a - np.asarray(b, dtype=np.float64)
    if d.ndim != 1 or len(d) < 1:
        raise ValueError("need at least one paired difference")
    if not np.all(np.isfinite(d)):
        raise ValueError("differences must be finite")
    nonzero = d != 0
    zeros = int(len(d) - nonzero.sum())
    if zeros == len(d):
        warnings.warn("all paired differences are zero; returning p = 1", DegenerateDataWarning, stacklevel=2)
        return WilcoxonResult(0.0, 1.0, 0, zeros, "degenerate", alternative)
    if zero_method == "wilcox":
        kept = d[nonzero]
        ranks = average_ranks(np.abs(kept))
    else:
        ranks = average_ranks(np.abs(d))[nonzero]
        kept = d[nonzero]
    n = len(kept)
    w_plus = float(ranks[kept > 0].sum())

    if n <= exact_max_n:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        w2 = int(doubled[kept > 0].sum())
        upper, lower = _tail_probabilities(w2, doubled)
        method = "exact"
    else:
        mean = ranks.sum() / 2.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = float((ranks * ranks).sum()) / 4.0
        if zero_method == "wilcox":
            # classic closed form; equals sum(r^2)/4 for untied ranks
            var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts**3 - tie_counts).sum()) / 48.0
        sd = math.sqrt(var)
        upper = _normal_sf((w_plus - mean - 0.5) / sd)
        lower = 1.0 - _normal_sf((w_plus - mean + 0.5) / sd)
        method = "normal"

    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2.0 * min(upper, lower))
    return WilcoxonResult(w_plus, float(p), n, zeros, method, alternative)

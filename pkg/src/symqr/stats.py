"""Nonparametric tests for comparing models over datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm, rankdata


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    flag: str | None = None


def bonferroni(alpha: float, m: int) -> float:
    if m < 1:
        raise ValueError("m must be >= 1")
    return alpha / m


def friedman_test(scores) -> TestResult:
    """Friedman chi-square over a (datasets x models) score matrix.

    Average ranks within each row, with the usual tie correction. A matrix
    with every row fully tied gives statistic 0 and p = 1.
    """
    S = np.asarray(scores, dtype=float)
    if S.ndim != 2 or S.shape[1] < 2:
        raise ValueError("need a 2-D matrix with at least two model columns")
    if S.shape[0] < 2:
        raise ValueError("need at least two datasets")
    n, k = S.shape
    ranks = np.apply_along_axis(rankdata, 1, S)
    rank_sums = ranks.sum(axis=0)
    ties = 0.0
    for row in S:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts**3 - counts))
    correction = 1.0 - ties / (n * k * (k * k - 1))
    if correction <= 0:
        return TestResult(0.0, 1.0, "all-tied")
    stat = (12.0 / (n * k * (k + 1)) * float(np.sum(rank_sums**2)) - 3.0 * n * (k + 1)) / correction
    stat = max(stat, 0.0)
    return TestResult(stat, float(chi2.sf(stat, k - 1)))


def _exact_signed_rank_cdf(doubled_ranks: list[int], t2: int) -> float:
    """P(W+ <= t) under random signs, with ranks and t scaled by 2 to stay integral."""
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    return float(counts[: t2 + 1].sum() / 2.0 ** len(doubled_ranks))


def wilcoxon_signed_rank(a, b, exact_max_n: int = 20) -> TestResult:
    """Two-sided paired signed-rank test; ``T = min(W+, W-)``.

    Zero differences are dropped. Exact null distribution for up to
    ``exact_max_n`` remaining pairs, otherwise a normal approximation with
    tie-corrected variance.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    diff = a - b
    diff = diff[diff != 0]
    n = diff.size
    if n == 0:
        return TestResult(0.0, 1.0, "all-zero-differences")
    ranks = rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    t = min(w_plus, w_minus)
    flag = "small-sample" if n < 5 else None
    if n <= exact_max_n:
        doubled = [int(round(2 * r)) for r in ranks]
        p = 2.0 * _exact_signed_rank_cdf(doubled, int(round(2 * t)))
    else:
        _, counts = np.unique(np.abs(diff), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
        p = 2.0 * float(norm.cdf((t - mean) / math.sqrt(var)))
    return TestResult(t, min(1.0, p), flag)

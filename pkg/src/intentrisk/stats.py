"""Paired significance tests: Wilcoxon signed-rank, sign-flip permutation, Holm."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 25


def wilcoxon_signed_rank(d: Sequence[float]) -> Optional[float]:
    """Two-sided p of the signed-rank test; None if fewer than 2 nonzero diffs.

    Zero differences are dropped and tied magnitudes share their mid-rank.
    Up to 25 nonzero differences the null distribution is enumerated exactly
    (on doubled ranks, which are integers even with mid-ranks); beyond that
    the normal approximation with tie-corrected variance is used.
    """
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    n = d.size
    if n < 2:
        return None
    ranks = rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        r2 = np.rint(2 * ranks).astype(np.int64)
        total = int(r2.sum())
        counts = np.zeros(total + 1)
        counts[0] = 1.0
        for r in r2:
            counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
        dist = counts / counts.sum()
        w2 = int(round(2 * w))
        lo = dist[: w2 + 1].sum()
        hi = dist[w2:].sum()
        return float(min(1.0, 2.0 * min(lo, hi)))
    mean = n * (n + 1) / 4.0
    _, t = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((t**3 - t).sum()) / 48.0
    if var <= 0:
        return 1.0
    z = (w - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def permutation_test(d: Sequence[float], B: int = 100_000, seed: int = 0, chunk: int = 10_000) -> float:
    """Paired randomization test by random sign flips of the differences.

    p = (1 + #{|mean*| >= |mean|}) / (1 + B).
    """
    if B < 1:
        raise ValueError("B must be positive")
    d = np.asarray(d, dtype=float)
    if d.size == 0 or not np.any(d):
        return 1.0
    rng = np.random.default_rng(seed)
    obs = abs(d.mean())
    tol = 1e-12 * max(1.0, obs)
    hits = 0
    done = 0
    while done < B:
        b = min(chunk, B - done)
        signs = rng.integers(0, 2, size=(b, d.size), dtype=np.int8) * 2 - 1
        hits += int(np.count_nonzero(np.abs(signs @ d) / d.size >= obs - tol))
        done += b
    return (1 + hits) / (1 + B)


def holm(pvalues: Sequence[Optional[float]], alpha: float = 0.05) -> tuple[list[bool], list[Optional[float]]]:
    """Holm-Bonferroni step-down: (reject flags, adjusted p-values).

    Missing p-values are never rejected and do not count as hypotheses.
    """
    idx = [i for i, p in enumerate(pvalues) if p is not None]
    idx.sort(key=lambda i: (pvalues[i], i))
    m = len(idx)
    reject = [False] * len(pvalues)
    adjusted: list[Optional[float]] = [None] * len(pvalues)
    running = 0.0
    stopped = False
    for j, i in enumerate(idx):
        p = pvalues[i]
        running = max(running, min(1.0, (m - j) * p))
        adjusted[i] = running
        if not stopped and p <= alpha / (m - j):
            reject[i] = True
        else:
            stopped = True
    return reject, adjusted


@dataclass(frozen=True)
class SignificanceResult:
    method_a: str
    method_b: str
    metric: str
    grid: str
    n: int
    n_nonzero: int
    mean_diff: float
    wilcoxon_p: Optional[float]
    permutation_p: float
    B: int
    wilcoxon_significant: bool = False
    permutation_significant: bool = False
    wilcoxon_p_holm: Optional[float] = None
    permutation_p_holm: Optional[float] = None

    @property
    def wilcoxon_defined(self) -> bool:
        return self.wilcoxon_p is not None


def paired_test(
    a: str,
    b: str,
    metric: str,
    grid: str,
    d: Sequence[float],
    B: int = 100_000,
    seed: int = 0,
) -> SignificanceResult:
    d = np.asarray(d, dtype=float)
    return SignificanceResult(
        method_a=a,
        method_b=b,
        metric=metric,
        grid=grid,
        n=int(d.size),
        n_nonzero=int(np.count_nonzero(d)),
        mean_diff=float(d.mean()) if d.size else 0.0,
        wilcoxon_p=wilcoxon_signed_rank(d),
        permutation_p=permutation_test(d, B, seed),
        B=B,
    )


def apply_holm(results: Sequence[SignificanceResult], alpha: float = 0.05) -> list[SignificanceResult]:
    from dataclasses import replace

    rw, aw = holm([r.wilcoxon_p for r in results], alpha)
    rp, ap = holm([r.permutation_p for r in results], alpha)
    return [
        replace(
            r,
            wilcoxon_significant=rw[i],
            permutation_significant=rp[i],
            wilcoxon_p_holm=aw[i],
            permutation_p_holm=ap[i],
        )
        for i, r in enumerate(results)
    ]

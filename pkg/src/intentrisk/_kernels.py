"""Compiled inner loop for VRisker's per-position candidate scan."""

import numpy as np
from numba import njit

# no nnan/ninf: inputs are finite but we do not want the compiler assuming it
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}
_BLOCK = 256


@njit(cache=True, fastmath=_FAST)
def extension_risks(G, coef, lraw, probs, beta):
    """VRisk of every one-document extension of the current prefix.

    Appending doc d leaves intent c with loss max(0, lraw[c] - G[d, c] * coef[c]).
    Rows are processed in blocks whose losses are transposed into a small
    (intents, block) buffer; within a block the distinct loss levels are
    peeled from the top in lockstep (one max pass, one mass pass per level)
    until every row has filled ``beta`` probability mass. No sorting, and the
    inner loops run over contiguous docs so they vectorize.
    """
    n, m = G.shape
    out = np.empty(n)
    L = np.empty((m, _BLOCK))
    level = np.empty(_BLOCK)
    prev = np.empty(_BLOCK)
    acc = np.empty(_BLOCK)
    total = np.empty(_BLOCK)
    mass = np.empty(_BLOCK)
    for s in range(0, n, _BLOCK):
        b = min(n, s + _BLOCK) - s
        for c in range(m):
            lc = lraw[c]
            cf = coef[c]
            for j in range(b):
                v = lc - G[s + j, c] * cf
                L[c, j] = v if v > 0.0 else 0.0
        for j in range(b):
            prev[j] = 1e300
            acc[j] = 0.0
            total[j] = 0.0
        for _ in range(m):
            for j in range(b):
                level[j] = -1.0
                mass[j] = 0.0
            for c in range(m):
                for j in range(b):
                    v = L[c, j]
                    level[j] = v if (v < prev[j] and v > level[j]) else level[j]
            for c in range(m):
                pc = probs[c]
                for j in range(b):
                    mass[j] += pc if L[c, j] == level[j] else 0.0
            left = 0.0
            for j in range(b):
                room = beta - acc[j]
                take = mass[j] if mass[j] < room else room
                take = take if level[j] >= 0.0 else 0.0
                total[j] += take * level[j]
                acc[j] += take
                prev[j] = level[j]
                left += room - take
            if left <= 0.0:
                break
        for j in range(b):
            out[s + j] = total[j] / beta
    return out

"""Exhaustive VRisk optimization for small instances, and guarantee checks.

Modular metrics only need subsets (order does not change any value), so the
enumerator visits C(n, k) candidates; position-sensitive metrics need every
ordered arrangement, C(n, k) * k! of them. Candidates are scored in chunks
with the vectorized value model.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import MetricSpec, QueryInstance, Ranking, make_instance
from .metrics import (
    TargetLevel,
    compute_targets,
    cvar,
    cvar_rows,
    discounts,
    intent_model,
    vrisk,
)
from .rankers import SCORE_TOL, DiversifierConfig, vrisker

DEFAULT_BUDGET = 2_000_000
_CHUNK = 50_000


class BudgetExceeded(RuntimeError):
    """The instance has more candidate rankings than the enumeration budget."""


def n_arrangements(n: int, k: int, modular: bool) -> int:
    t = min(n, k)
    subsets = math.comb(n, t)
    return subsets if modular else subsets * math.factorial(t)


def _arrangements(n: int, t: int, modular: bool) -> Iterable[tuple[int, ...]]:
    if modular:
        return itertools.combinations(range(n), t)
    return itertools.permutations(range(n), t)


def _chunks(it: Iterable[tuple[int, ...]], t: int):
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        yield np.array(block, dtype=np.int64).reshape(len(block), t)


def exact_vrisk_opt(
    inst: QueryInstance,
    k: int,
    beta: float,
    spec: MetricSpec,
    targets: Optional[np.ndarray] = None,
    budget: int = DEFAULT_BUDGET,
    tie_epsilon: float = DiversifierConfig().tie_epsilon,
) -> tuple[Ranking, float]:
    """Globally VRisk-optimal ranking of length min(k, n).

    Ties within ``tie_epsilon`` go to the larger intent-weighted value, then
    to the lexicographically smallest doc-id sequence. For modular metrics
    the chosen set is listed by descending raw relevance, then doc id.

    Raises :class:`BudgetExceeded` when the candidate count exceeds ``budget``.
    """
    if k < 1:
        raise ValueError(f"cutoff k must be positive, got {k}")
    if targets is None:
        targets = compute_targets(inst, spec, k, TargetLevel())
    targets = np.asarray(targets, dtype=float)
    n = inst.n_docs
    t = min(n, k)
    count = n_arrangements(n, k, spec.modular)
    if count > budget:
        raise BudgetExceeded(
            f"query {inst.query_id!r}: {count} candidate rankings exceed the budget of {budget}"
        )
    model = intent_model(inst, spec, k)
    probs = inst.probs
    docs = inst.docs

    best_key = None  # (risk, iw, ids)
    for idx in _chunks(iter(_arrangements(n, t, spec.modular)), t):
        vals = model.values_batch(idx)
        risk = cvar_rows(np.maximum(0.0, targets - vals), probs, beta)
        lo = risk.min()
        if best_key is not None and lo > best_key[0] + tie_epsilon:
            continue
        cand = np.flatnonzero(risk <= lo + tie_epsilon)
        iw = vals[cand] @ probs
        top = iw.max()
        cand = cand[iw >= top - SCORE_TOL * max(1.0, abs(top))]
        ids = min(_doc_order(inst, idx[c], spec) for c in cand)
        key = (float(lo), float(top), ids)
        best_key = key if best_key is None else _better(best_key, key, tie_epsilon)

    ranking = Ranking(best_key[2], k)
    return ranking, vrisk(inst, ranking, spec, targets, beta).vrisk


def _doc_order(inst: QueryInstance, idx: np.ndarray, spec: MetricSpec) -> tuple[str, ...]:
    if spec.modular:
        raw = inst.raw_relevances
        idx = sorted(idx, key=lambda i: (-raw[i], inst.docs[i]))
    return tuple(inst.docs[i] for i in idx)


def _better(a, b, eps):
    if b[0] < a[0] - eps:
        return b
    if a[0] < b[0] - eps:
        return a
    band = SCORE_TOL * max(1.0, abs(a[1]), abs(b[1]))
    if b[1] > a[1] + band:
        return b
    if a[1] > b[1] + band:
        return a
    return a if a[2] <= b[2] else b


# ---------------------------------------------------------------------------
# Weighted Max-k-Cover reduction


@dataclass(frozen=True)
class CoverInstance:
    """A Max-k-Cover problem encoded as a VRisk instance (AvgRel, beta = 1)."""

    inst: QueryInstance
    targets: np.ndarray
    k: int
    sets: tuple[frozenset, ...]
    weights: Mapping[str, float]
    beta: float = 1.0
    spec: MetricSpec = MetricSpec("avgrel")

    @property
    def total_weight(self) -> float:
        return float(sum(self.weights.values()))

    def covered_weight(self, ranking: Ranking) -> float:
        covered = set().union(*(self.sets[int(d[1:]) - 1] for d in ranking.doc_ids))
        return float(sum(self.weights[u] for u in covered))

    def closed_form(self, ranking: Ranking) -> float:
        """(1/k) times the uncovered weight fraction."""
        return (1.0 - self.covered_weight(ranking) / self.total_weight) / self.k

    def vrisk(self, ranking: Ranking) -> float:
        return vrisk(self.inst, ranking, self.spec, self.targets, self.beta).vrisk


def maxkcover_instance(
    weights: Mapping[str, float] | Sequence[float],
    sets: Sequence[Iterable],
    k: int,
) -> CoverInstance:
    """Encode weighted Max-k-Cover over ``sets`` as VRisk minimization.

    Elements become intents with probability proportional to weight, each
    set becomes a doc ``S<j>`` with binary relevance to its members, and all
    targets equal 1/k.
    """
    if k < 1:
        raise ValueError(f"cutoff k must be positive, got {k}")
    if not isinstance(weights, Mapping):
        weights = {f"u{i + 1}": float(w) for i, w in enumerate(weights)}
    weights = {str(u): float(w) for u, w in weights.items()}
    if any(w < 0 for w in weights.values()):
        raise ValueError("element weights must be nonnegative")
    W = sum(weights.values())
    if not W > 0:
        raise ValueError("total element weight must be positive")
    if len(sets) == 0:
        raise ValueError("set family is empty")
    fam = tuple(frozenset(str(u) for u in s) for s in sets)
    unknown = set().union(*fam) - set(weights)
    if unknown:
        raise ValueError(f"sets mention elements without weight: {sorted(unknown)}")
    elems = list(weights)
    rel = [[1.0 if u in s else 0.0 for u in elems] for s in fam]
    inst = make_instance(
        "maxkcover",
        {u: weights[u] / W for u in elems},
        rel,
        docs=[f"S{j + 1}" for j in range(len(fam))],
        rel_max=1.0,
    )
    return CoverInstance(inst, np.full(len(elems), 1.0 / k), k, fam, weights)


# ---------------------------------------------------------------------------
# approximation guarantees


@dataclass(frozen=True)
class GuaranteeReport:
    delta_greedy: float
    delta_opt: float
    bound: float
    satisfied: bool
    gamma: Optional[float] = None
    greedy: Optional[Ranking] = None
    optimal: Optional[Ranking] = None

    @property
    def ratio(self) -> Optional[float]:
        """Fraction of the optimal risk drop the greedy ranking captures."""
        return None if self.delta_opt <= 0 else self.delta_greedy / self.delta_opt


def submodularity_ratio(k: int) -> float:
    """w_k / sum of w_1..w_k for the logarithmic discount."""
    w = discounts(MetricSpec("ndcg"), k)
    return float(w[-1] / w.sum())


def guarantee_bound(spec: MetricSpec, k: int) -> tuple[float, Optional[float]]:
    """(approximation factor, gamma) that applies to ``spec`` at cutoff ``k``."""
    if spec.modular:
        return 1.0 - math.exp(-1.0), None
    if spec.metric_id == "ndcg":
        g = submodularity_ratio(k)
        return 1.0 - math.exp(-g), g
    raise ValueError(f"no approximation guarantee is stated for {spec.metric_id}")


def check_guarantee(
    inst: QueryInstance,
    k: int,
    beta: float,
    spec: MetricSpec,
    targets: Optional[np.ndarray] = None,
    budget: int = DEFAULT_BUDGET,
    tol: float = 1e-9,
) -> GuaranteeReport:
    """Compare VRisker's risk drop against the exhaustive optimum."""
    if targets is None:
        targets = compute_targets(inst, spec, k, TargetLevel())
    targets = np.asarray(targets, dtype=float)
    bound, gamma = guarantee_bound(spec, k)
    empty = cvar(targets, inst.probs, beta)[0]
    greedy = vrisker(inst, k, beta, spec, targets)
    optimal, opt_risk = exact_vrisk_opt(inst, k, beta, spec, targets, budget=budget)
    d_greedy = empty - vrisk(inst, greedy, spec, targets, beta).vrisk
    d_opt = empty - opt_risk
    return GuaranteeReport(
        delta_greedy=float(d_greedy),
        delta_opt=float(d_opt),
        bound=bound,
        satisfied=bool(d_greedy >= bound * d_opt - tol),
        gamma=gamma,
        greedy=greedy,
        optimal=optimal,
    )


def risk_drop(inst: QueryInstance, docs: Sequence[str], k: int, beta: float, spec: MetricSpec, targets) -> float:
    """VRisk(empty) - VRisk(docs) for an arbitrary doc sequence."""
    targets = np.asarray(targets, dtype=float)
    if not docs:
        return 0.0
    r = Ranking(tuple(docs), k)
    return cvar(targets, inst.probs, beta)[0] - vrisk(inst, r, spec, targets, beta).vrisk


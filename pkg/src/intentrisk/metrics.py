"""Ranking metrics, intent-level values, losses and VRisk (discrete CVaR).

Two evaluation routes live here. :func:`base_value` is the plain
one-ranking-at-a-time definition of every base metric. :class:`ValueModel`
precomputes gains, discounts and normalizers for a whole candidate pool so
that greedy re-rankers and the exact enumerator can score many rankings (or
many one-document extensions of a prefix) in a single numpy pass. Tests keep
the two routes in agreement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import InstanceError, MetricSpec, QueryInstance, Ranking


# ---------------------------------------------------------------------------
# base metrics


def discounts(spec: MetricSpec, k: int) -> np.ndarray:
    """Per-position weights w_1..w_k of the metric."""
    if k <= 0:
        raise ValueError(f"cutoff k must be positive, got {k}")
    pos = np.arange(1, k + 1, dtype=float)
    mid = spec.metric_id
    if mid in ("avgrel", "precatk"):
        return np.full(k, 1.0 / k)
    if mid in ("dcg", "ndcg"):
        return 1.0 / np.log2(1.0 + pos)
    if mid == "rbp":
        p = spec.rbp_persistence
        return (1.0 - p) * p ** (pos - 1.0)
    if mid == "err":
        return 1.0 / pos
    raise AssertionError(mid)


def gains(spec: MetricSpec, grades: np.ndarray, rel_min: float = 0.0, rel_max: float = 1.0) -> np.ndarray:
    """Map relevance grades to the per-document quantity the metric sums.

    For ERR this is the stop probability ``(2^rel - 1) / 2^rel_max``.
    """
    g = np.asarray(grades, dtype=float)
    mid = spec.metric_id
    if mid == "avgrel":
        return g.copy()
    if mid == "precatk":
        return (g >= spec.threshold(rel_min, rel_max)).astype(float)
    if mid in ("dcg", "ndcg"):
        return np.exp2(g) - 1.0 if spec.gain_scheme == "exponential" else g.copy()
    if mid == "rbp":
        return g / rel_max
    if mid == "err":
        # written so that large rel_max does not overflow
        return np.exp2(g - rel_max) - np.exp2(-rel_max)
    raise AssertionError(mid)


def top_sorted(G: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` largest entries of each column, sorted descending."""
    if k < G.shape[0]:
        G = -np.partition(-G, k - 1, axis=0)[:k]
    return -np.sort(-G, axis=0)[:k]


def _cascade(w: np.ndarray, s: np.ndarray) -> float:
    survive = 1.0
    total = 0.0
    for wi, si in zip(w, s):
        total += wi * si * survive
        survive *= 1.0 - si
    return total


def base_value(
    spec: MetricSpec,
    rels: Sequence[float],
    k: int,
    ideal_rels: Optional[Sequence[float]] = None,
    rel_max: float = 1.0,
    rel_min: float = 0.0,
) -> float:
    """Value of one ranked grade sequence under ``spec`` at cutoff ``k``.

    ``rels`` may be shorter than ``k``; AvgRel and Precision@k still divide
    by ``k``. ``ideal_rels`` is the candidate pool used for the nDCG ideal.
    """
    if k <= 0:
        raise ValueError(f"cutoff k must be positive, got {k}")
    rels = np.asarray(rels, dtype=float)
    if rels.size > k:
        raise ValueError(f"{rels.size} grades exceed cutoff {k}")
    w = discounts(spec, k)
    g = gains(spec, rels, rel_min, rel_max)
    if spec.metric_id == "err":
        return float(_cascade(w, g))
    value = float(np.dot(w[: g.size], g))
    if spec.metric_id != "ndcg":
        return value
    if ideal_rels is None or len(ideal_rels) == 0:
        raise ValueError("nDCG needs a non-empty ideal grade list")
    ideal = np.sort(np.asarray(ideal_rels, dtype=float))[::-1][:k]
    idcg = float(np.dot(w[: ideal.size], gains(spec, ideal, rel_min, rel_max)))
    return value / idcg if idcg > 0 else 0.0


# ---------------------------------------------------------------------------
# vectorized value model


class ValueModel:
    """Metric values of rankings drawn from a fixed pool, one column per intent.

    ``G`` holds the per-document gain per column, ``w`` the position weights
    and ``scale`` the per-column normalizer (1/IDCG for nDCG, else 1).
    """

    def __init__(self, G: np.ndarray, w: np.ndarray, scale: np.ndarray, cascade: bool):
        self.G = np.ascontiguousarray(G, dtype=float)
        self.w = w
        self.scale = scale
        self.cascade = cascade
        self.k = len(w)

    @classmethod
    def for_grades(cls, spec: MetricSpec, grades: np.ndarray, k: int, rel_min: float, rel_max: float) -> "ValueModel":
        grades = np.asarray(grades, dtype=float)
        if grades.ndim == 1:
            grades = grades[:, None]
        w = discounts(spec, k)
        G = gains(spec, grades, rel_min, rel_max)
        scale = np.ones(G.shape[1])
        if spec.metric_id == "ndcg":
            top = top_sorted(G, k)
            idcg = w[: top.shape[0]] @ top
            scale = np.divide(1.0, idcg, out=np.zeros_like(idcg), where=idcg > 0)
        return cls(G, w, scale, spec.metric_id == "err")

    def values(self, idx: Sequence[int]) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return np.zeros(self.G.shape[1])
        return self.values_batch(idx[None, :])[0]

    def values_batch(self, idx: np.ndarray) -> np.ndarray:
        """Values for many equal-length rankings; ``idx`` has shape (A, t)."""
        idx = np.asarray(idx, dtype=np.int64)
        t = idx.shape[1]
        if t > self.k:
            raise ValueError(f"rankings of length {t} exceed cutoff {self.k}")
        g = self.G[idx]  # (A, t, m)
        if self.cascade:
            survive = np.cumprod(1.0 - g, axis=1)
            survive = np.concatenate([np.ones_like(g[:, :1]), survive[:, :-1]], axis=1)
            g = g * survive
        return np.einsum("atm,t->am", g, self.w[:t]) * self.scale

    def oracle(self) -> np.ndarray:
        """Best achievable value per column: each column sorted descending."""
        top = top_sorted(self.G, self.k)
        t = top.shape[0]
        if self.cascade:
            survive = np.cumprod(1.0 - top, axis=0)
            survive = np.vstack([np.ones((1, top.shape[1])), survive[:-1]])
            top = top * survive
        return (self.w[:t] @ top) * self.scale

    def start(self) -> "GreedyState":
        return GreedyState(self)


class GreedyState:
    """Running per-column values of a growing prefix.

    ``extend_all`` returns the values of every one-document extension in
    O(n m), which keeps greedy re-ranking at O(k n m) overall.
    """

    def __init__(self, model: ValueModel):
        self.model = model
        m = model.G.shape[1]
        self.cur = np.zeros(m)
        self.survive = np.ones(m)
        self.t = 0

    def increments(self) -> np.ndarray:
        mdl = self.model
        coef = mdl.w[self.t] * mdl.scale
        if mdl.cascade:
            coef = coef * self.survive
        return mdl.G * coef

    def extend_all(self) -> np.ndarray:
        return self.cur + self.increments()

    def add(self, d: int) -> None:
        mdl = self.model
        coef = mdl.w[self.t] * mdl.scale
        if mdl.cascade:
            coef = coef * self.survive
            self.survive = self.survive * (1.0 - mdl.G[d])
        self.cur = self.cur + mdl.G[d] * coef
        self.t += 1


def intent_model(inst: QueryInstance, spec: MetricSpec, k: int) -> ValueModel:
    return ValueModel.for_grades(spec, inst.rel, k, inst.rel_min, inst.rel_max)


def standard_grades(inst: QueryInstance, spec: MetricSpec) -> np.ndarray:
    """Intent-marginalized grades the standard metric is computed on.

    For Precision@k the labels are binarized per intent first and then
    marginalized, so the standard value is the expected precision.
    """
    if spec.metric_id == "precatk":
        t = spec.threshold(inst.rel_min, inst.rel_max)
        return (inst.rel >= t).astype(float) @ inst.probs
    return inst.raw_relevances


def standard_model(inst: QueryInstance, spec: MetricSpec, k: int) -> ValueModel:
    grades = standard_grades(inst, spec)
    if spec.metric_id == "precatk":
        return ValueModel.for_grades(MetricSpec("avgrel"), grades, k, 0.0, 1.0)
    return ValueModel.for_grades(spec, grades, k, inst.rel_min, inst.rel_max)


# ---------------------------------------------------------------------------
# per-intent, standard and intent-weighted values


def _ranked(inst: QueryInstance, ranking: Ranking) -> np.ndarray:
    return inst.indices(ranking.doc_ids)


def per_intent_value(inst: QueryInstance, ranking: Ranking, intent: str, spec: MetricSpec) -> float:
    try:
        c = inst.intent_index[intent]
    except KeyError:
        raise InstanceError(f"unknown intent {intent!r} in query {inst.query_id!r}") from None
    col = inst.rel[:, c]
    return base_value(spec, col[_ranked(inst, ranking)], ranking.k, col, inst.rel_max, inst.rel_min)


def per_intent_values(inst: QueryInstance, ranking: Ranking, spec: MetricSpec) -> np.ndarray:
    """Per-intent values of ``ranking`` aligned with ``inst.intents``."""
    return intent_model(inst, spec, ranking.k).values(_ranked(inst, ranking))


def v_std(inst: QueryInstance, ranking: Ranking, spec: MetricSpec) -> float:
    """Standard (intent-agnostic) value on marginalized grades."""
    return float(standard_model(inst, spec, ranking.k).values(_ranked(inst, ranking))[0])


def v_iw(inst: QueryInstance, ranking: Ranking, spec: MetricSpec) -> float:
    """Intent-weighted value: sum of P(c|q) times the per-intent value."""
    return float(inst.probs @ per_intent_values(inst, ranking, spec))


# ---------------------------------------------------------------------------
# targets and losses


TARGET_MODES = ("oracle", "scaled_oracle", "baseline_ranking", "constant")


@dataclass(frozen=True)
class TargetLevel:
    mode: str = "oracle"
    alpha: float = 1.0
    baseline: Optional[Ranking] = None
    constant: Optional[float] = None

    def __post_init__(self):
        if self.mode not in TARGET_MODES:
            raise ValueError(f"unknown target mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("target alpha must lie in [0, 1]")
        if self.mode == "constant" and (self.constant is None or self.constant < 0):
            raise ValueError("constant target needs a nonnegative constant")


def compute_targets(inst: QueryInstance, spec: MetricSpec, k: int, target: TargetLevel = TargetLevel()) -> np.ndarray:
    if k < 1:
        raise ValueError(f"cutoff k must be positive, got {k}")
    if target.mode == "constant":
        return np.full(inst.n_intents, float(target.constant))
    if target.mode == "baseline_ranking":
        if target.baseline is None:
            raise ValueError("baseline_ranking target needs a baseline ranking")
        return intent_model(inst, spec, k).values(_ranked(inst, target.baseline))
    tgt = intent_model(inst, spec, k).oracle()
    if target.mode == "scaled_oracle":
        tgt = tgt * target.alpha
    return tgt


def losses_from_values(values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, targets - values)


def intent_loss(inst: QueryInstance, ranking: Ranking, spec: MetricSpec, targets: np.ndarray) -> np.ndarray:
    """Hinge shortfall below target per intent, aligned with ``inst.intents``."""
    return losses_from_values(per_intent_values(inst, ranking, spec), np.asarray(targets, dtype=float))


# ---------------------------------------------------------------------------
# VRisk


@dataclass(frozen=True)
class RiskEvaluation:
    vrisk: float
    beta: float
    var_threshold: float
    worst_mass: tuple[tuple[str, float, float], ...]
    losses: tuple[float, ...] = ()


def _check_beta(beta: float) -> None:
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")


def tail_order(losses: np.ndarray, probs: np.ndarray, intents: Sequence[str]) -> list[int]:
    """Intents sorted by loss descending, then probability descending, then id."""
    return sorted(range(len(losses)), key=lambda c: (-losses[c], -probs[c], intents[c]))


def cvar(losses: np.ndarray, probs: np.ndarray, beta: float, intents: Optional[Sequence[str]] = None):
    """Discrete CVaR by filling exactly ``beta`` of probability mass from the top.

    Returns ``(value, zeta, parts)`` where ``parts`` lists
    ``(intent_index, clipped_weight, loss)`` for the intents in the tail.
    """
    _check_beta(beta)
    losses = np.asarray(losses, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if intents is None:
        intents = [f"{c:08d}" for c in range(len(losses))]
    parts = []
    acc = 0.0
    for c in tail_order(losses, probs, intents):
        take = min(float(probs[c]), beta - acc)
        if take <= 0.0:
            break
        parts.append((c, take, float(losses[c])))
        acc += take
    value = sum(wt * l for _, wt, l in parts) / beta
    zeta = parts[-1][2] if parts else 0.0
    return value, zeta, parts


def cvar_rows(L: np.ndarray, probs: np.ndarray, beta: float) -> np.ndarray:
    """Discrete CVaR of every row of a (A, m) loss matrix."""
    _check_beta(beta)
    order = np.argsort(-L, axis=1, kind="stable")
    Ls = np.take_along_axis(L, order, axis=1)
    Ps = probs[order]
    before = np.cumsum(Ps, axis=1) - Ps
    wts = np.clip(beta - before, 0.0, Ps)
    return np.einsum("am,am->a", wts, Ls) / beta


def vrisk(inst: QueryInstance, ranking: Ranking, spec: MetricSpec, targets: np.ndarray, beta: float) -> RiskEvaluation:
    """Expected loss over the worst ``beta`` probability mass of intents."""
    _check_beta(beta)
    losses = intent_loss(inst, ranking, spec, targets)
    value, zeta, parts = cvar(losses, inst.probs, beta, inst.intents)
    return RiskEvaluation(
        vrisk=float(value),
        beta=float(beta),
        var_threshold=float(zeta),
        worst_mass=tuple((inst.intents[c], wt, l) for c, wt, l in parts),
        losses=tuple(float(x) for x in losses),
    )


def delta_normalize(value: float, naive_value: float) -> Optional[float]:
    """Percentage of the naive value; None when undefined (naive 0, value > 0)."""
    if naive_value == 0:
        return 100.0 if value == 0 else None
    if value == naive_value:
        return 100.0
    return 100.0 * value / naive_value

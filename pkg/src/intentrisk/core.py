"""Shared data model: intent distributions, relevance tables, query instances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

PROB_TOL = 1e-9
# sums this close to 1 are float noise; renormalizing would not make them exact
_RENORM_FLOOR = 1e-12

METRIC_IDS = ("avgrel", "dcg", "ndcg", "err", "rbp", "precatk")
_METRIC_ALIASES = {
    "avgrel": "avgrel",
    "avg": "avgrel",
    "dcg": "dcg",
    "ndcg": "ndcg",
    "err": "err",
    "rbp": "rbp",
    "precatk": "precatk",
    "prec@k": "precatk",
    "precision@k": "precatk",
    "p@k": "precatk",
}
MODULAR_METRICS = frozenset({"avgrel", "precatk"})


class InstanceError(ValueError):
    """A query instance violates one of the data-model invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IntentDistribution:
    intents: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "intents", tuple(str(c) for c in self.intents))
        object.__setattr__(self, "probs", _frozen(self.probs))

    def __len__(self) -> int:
        return len(self.intents)


@dataclass(frozen=True, eq=False)
class RelevanceTable:
    docs: tuple[str, ...]
    rel: np.ndarray  # [doc][intent]
    rel_max: float
    rel_min: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(str(d) for d in self.docs))
        object.__setattr__(self, "rel", _frozen(np.atleast_2d(self.rel)))
        object.__setattr__(self, "rel_max", float(self.rel_max))
        object.__setattr__(self, "rel_min", float(self.rel_min))


@dataclass(frozen=True, eq=False)
class QueryInstance:
    query_id: str
    intent_dist: IntentDistribution
    rel_table: RelevanceTable
    doc_features: Optional[tuple[Optional[str], ...]] = None

    @property
    def probs(self) -> np.ndarray:
        return self.intent_dist.probs

    @property
    def rel(self) -> np.ndarray:
        return self.rel_table.rel

    @property
    def docs(self) -> tuple[str, ...]:
        return self.rel_table.docs

    @property
    def intents(self) -> tuple[str, ...]:
        return self.intent_dist.intents

    @property
    def rel_max(self) -> float:
        return self.rel_table.rel_max

    @property
    def rel_min(self) -> float:
        return self.rel_table.rel_min

    @property
    def n_docs(self) -> int:
        return len(self.rel_table.docs)

    @property
    def n_intents(self) -> int:
        return len(self.intent_dist.intents)

    @cached_property
    def doc_index(self) -> dict[str, int]:
        return {d: i for i, d in enumerate(self.docs)}

    @cached_property
    def intent_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.intents)}

    @cached_property
    def id_rank(self) -> np.ndarray:
        """Position of each doc in ascending doc-id order (the final tie-break)."""
        order = np.argsort(np.array(self.docs, dtype=str), kind="stable")
        rank = np.empty(self.n_docs, dtype=np.int64)
        rank[order] = np.arange(self.n_docs)
        return rank

    @cached_property
    def raw_relevances(self) -> np.ndarray:
        r = self.rel @ self.probs
        r.setflags(write=False)
        return r

    def with_probs(self, probs: Sequence[float]) -> "QueryInstance":
        return QueryInstance(
            self.query_id,
            IntentDistribution(self.intents, np.asarray(probs, dtype=float)),
            self.rel_table,
            self.doc_features,
        )

    def indices(self, doc_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.fromiter((self.doc_index[d] for d in doc_ids), dtype=np.int64, count=len(doc_ids))
        except KeyError as e:
            raise InstanceError(f"unknown doc id {e.args[0]!r} in query {self.query_id!r}") from None


@dataclass(frozen=True)
class Ranking:
    doc_ids: tuple[str, ...]
    k: int

    def __post_init__(self):
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        if self.k < 1:
            raise ValueError(f"cutoff k must be positive, got {self.k}")
        if len(self.doc_ids) > self.k:
            raise ValueError(f"ranking has {len(self.doc_ids)} docs but cutoff is {self.k}")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError("ranking contains duplicate doc ids")

    def __len__(self) -> int:
        return len(self.doc_ids)

    @classmethod
    def from_indices(cls, inst: QueryInstance, idx: Sequence[int], k: int) -> "Ranking":
        return cls(tuple(inst.docs[i] for i in idx), k)


@dataclass(frozen=True)
class MetricSpec:
    """Which base metric to apply, plus its knobs.

    ``gain_scheme`` defaults to exponential gain for DCG/nDCG and only affects
    those two. ``binarize_threshold`` of None means the instance midpoint
    ``(rel_max + rel_min) / 2``.
    """

    metric_id: str = "avgrel"
    rbp_persistence: float = 0.8
    gain_scheme: Optional[str] = None
    binarize_threshold: Optional[float] = None

    def __post_init__(self):
        mid = _METRIC_ALIASES.get(str(self.metric_id).lower())
        if mid is None:
            raise ValueError(f"unknown metric {self.metric_id!r}; expected one of {METRIC_IDS}")
        object.__setattr__(self, "metric_id", mid)
        if not 0.0 < self.rbp_persistence < 1.0:
            raise ValueError("rbp_persistence must lie in (0, 1)")
        gain = self.gain_scheme
        if gain is None:
            gain = "exponential" if mid in ("dcg", "ndcg", "err") else "linear"
        if gain not in ("linear", "exponential"):
            raise ValueError(f"unknown gain scheme {gain!r}")
        object.__setattr__(self, "gain_scheme", gain)

    @property
    def modular(self) -> bool:
        return self.metric_id in MODULAR_METRICS

    @property
    def linear(self) -> bool:
        """True when the intent-weighted value collapses onto the standard value."""
        return self.modular or (self.metric_id == "dcg" and self.gain_scheme == "linear")

    def threshold(self, rel_min: float, rel_max: float) -> float:
        t = (rel_max + rel_min) / 2.0 if self.binarize_threshold is None else float(self.binarize_threshold)
        if not rel_min <= t <= rel_max:
            raise ValueError(f"binarize threshold {t} outside [{rel_min}, {rel_max}]")
        return t


def validate_instance(inst: QueryInstance) -> QueryInstance:
    """Check every invariant and return a validated instance.

    Probabilities within ``PROB_TOL`` of summing to one are renormalized; in
    that case a new instance is returned, otherwise ``inst`` itself. Drift
    below 1e-12 is left alone so that validation is idempotent.
    """
    intents, probs = inst.intent_dist.intents, inst.intent_dist.probs
    table = inst.rel_table
    qid = inst.query_id
    if len(intents) == 0:
        raise InstanceError(f"query {qid!r}: no intents")
    if probs.ndim != 1 or len(probs) != len(intents):
        raise InstanceError(f"query {qid!r}: {len(intents)} intents but {probs.size} probabilities")
    if len(set(intents)) != len(intents):
        raise InstanceError(f"query {qid!r}: duplicate intent ids")
    if not np.all(np.isfinite(probs)):
        raise InstanceError(f"query {qid!r}: non-finite probability")
    if np.any(probs < 0):
        raise InstanceError(f"query {qid!r}: negative probability {probs.min():g}")
    total = float(probs.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise InstanceError(f"query {qid!r}: probabilities sum to {total:.10g}")
    if len(table.docs) == 0:
        raise InstanceError(f"query {qid!r}: no documents")
    if len(set(table.docs)) != len(table.docs):
        raise InstanceError(f"query {qid!r}: duplicate doc ids")
    rel = table.rel
    if rel.shape != (len(table.docs), len(intents)):
        raise InstanceError(
            f"query {qid!r}: relevance table has shape {rel.shape}, "
            f"expected ({len(table.docs)}, {len(intents)})"
        )
    if table.rel_min < 0:
        raise InstanceError(f"query {qid!r}: negative rel_min {table.rel_min:g}")
    if not table.rel_max > 0 or not table.rel_min <= table.rel_max:
        raise InstanceError(f"query {qid!r}: invalid grade range [{table.rel_min:g}, {table.rel_max:g}]")
    if not np.all(np.isfinite(rel)):
        raise InstanceError(f"query {qid!r}: non-finite relevance")
    if rel.min() < table.rel_min:
        raise InstanceError(f"query {qid!r}: relevance below rel_min ({rel.min():g} < {table.rel_min:g})")
    if rel.max() > table.rel_max:
        raise InstanceError(f"query {qid!r}: relevance above rel_max ({rel.max():g} > {table.rel_max:g})")
    if inst.doc_features is not None and len(inst.doc_features) != len(table.docs):
        raise InstanceError(f"query {qid!r}: {len(inst.doc_features)} feature entries for {len(table.docs)} docs")
    if abs(total - 1.0) > _RENORM_FLOOR:
        return inst.with_probs(probs / total)
    return inst


def raw_relevance(inst: QueryInstance, doc: str) -> float:
    """Intent-marginalized relevance of one document."""
    try:
        i = inst.doc_index[doc]
    except KeyError:
        raise InstanceError(f"unknown doc id {doc!r} in query {inst.query_id!r}") from None
    return float(inst.rel[i] @ inst.probs)


def make_instance(
    query_id: str,
    probs: dict[str, float] | Sequence[float],
    rel: Sequence[Sequence[float]],
    docs: Sequence[str] | None = None,
    rel_max: float | None = None,
    rel_min: float = 0.0,
    doc_features: Sequence[Optional[str]] | None = None,
    validate: bool = True,
) -> QueryInstance:
    """Convenience constructor from plain Python containers."""
    if isinstance(probs, dict):
        intents, p = list(probs), list(probs.values())
    else:
        p = list(probs)
        intents = [f"c{j + 1}" for j in range(len(p))]
    rel = np.asarray(rel, dtype=float).reshape(-1, len(intents))
    if docs is None:
        docs = [f"d{i + 1}" for i in range(rel.shape[0])]
    if rel_max is None:
        rel_max = max(float(rel.max()) if rel.size else 1.0, 1.0)
    inst = QueryInstance(
        str(query_id),
        IntentDistribution(tuple(intents), np.asarray(p, dtype=float)),
        RelevanceTable(tuple(docs), rel, rel_max, rel_min),
        None if doc_features is None else tuple(doc_features),
    )
    return validate_instance(inst) if validate else inst


def toy_instance() -> QueryInstance:
    """Two intents (0.51 / 0.49), two binary-relevant docs for each."""
    return make_instance(
        "toy",
        {"c1": 0.51, "c2": 0.49},
        [[1, 0], [1, 0], [0, 1], [0, 1]],
        docs=["d1", "d2", "d3", "d4"],
        rel_max=1.0,
    )


def isclose(a: float, b: float, tol: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)

"""Greedy re-rankers: VRisker and the diversification baselines.

Every ranker breaks remaining ties by ascending doc id, so outputs are
reproducible bit for bit. Scores within a relative 1e-12 band of the best
count as tied; this keeps algebraically equal scores computed along different
floating-point paths from splitting ties differently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import extension_risks
from .core import InstanceError, MetricSpec, QueryInstance, Ranking
from .metrics import (
    TargetLevel,
    compute_targets,
    cvar_rows,
    intent_model,
    standard_grades,
)

SCORE_TOL = 1e-12


@dataclass(frozen=True)
class DiversifierConfig:
    lam: float = 0.5
    tie_epsilon: float = 1e-12
    tie_break: str = "iw"  # "iw" or "random"
    seed: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.tie_epsilon < 0:
            raise ValueError("tie_epsilon must be nonnegative")
        if self.tie_break not in ("iw", "random"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")


def _band(best: float) -> float:
    return SCORE_TOL * max(1.0, abs(best))


def _pick_max(scores: np.ndarray, avail: np.ndarray, id_rank: np.ndarray) -> int:
    s = np.where(avail, scores, -np.inf)
    best = s.max()
    tied = np.flatnonzero(s >= best - _band(best))
    return int(tied[np.argmin(id_rank[tied])])


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"cutoff k must be positive, got {k}")


def _greedy(inst: QueryInstance, k: int, step) -> Ranking:
    """Run ``step(avail, chosen) -> doc index`` for min(k, n) positions."""
    _check_k(k)
    avail = np.ones(inst.n_docs, dtype=bool)
    chosen: list[int] = []
    for _ in range(min(k, inst.n_docs)):
        d = step(avail, chosen)
        avail[d] = False
        chosen.append(d)
    return Ranking.from_indices(inst, chosen, k)


def naive_rank(inst: QueryInstance, k: int, spec: Optional[MetricSpec] = None) -> Ranking:
    """Top-k by raw relevance (or by the grades ``spec``'s standard metric uses)."""
    scores = inst.raw_relevances if spec is None else standard_grades(inst, spec)
    return _greedy(inst, k, lambda avail, _: _pick_max(scores, avail, inst.id_rank))


def iw_greedy(inst: QueryInstance, k: int, spec: MetricSpec) -> Ranking:
    """Greedy maximization of the intent-weighted value."""
    state = intent_model(inst, spec, k).start()

    def step(avail, _):
        d = _pick_max(state.increments() @ inst.probs, avail, inst.id_rank)
        state.add(d)
        return d

    return _greedy(inst, k, step)


def vrisker(
    inst: QueryInstance,
    k: int,
    beta: float,
    spec: MetricSpec,
    targets: Optional[np.ndarray] = None,
    cfg: DiversifierConfig = DiversifierConfig(),
    compiled: bool = True,
) -> Ranking:
    """Greedy VRisk minimization with intent-weighted tie-breaking.

    At each position the document whose addition gives the smallest VRisk is
    appended; candidates within ``cfg.tie_epsilon`` of that minimum are
    separated by the intent-weighted value of the extended prefix (or
    uniformly at random with ``tie_break="random"``), then by doc id.

    ``compiled=False`` scores candidates with the numpy reference CVaR
    instead of the compiled scan; both give the same ranking.
    """
    if targets is None:
        targets = compute_targets(inst, spec, k, TargetLevel())
    targets = np.asarray(targets, dtype=float)
    state = intent_model(inst, spec, k).start()
    G = state.model.G
    probs = inst.probs
    rng = np.random.default_rng(cfg.seed) if cfg.tie_break == "random" else None

    def step(avail, _):
        coef = _coef(state)
        lraw = targets - state.cur
        if compiled:
            risk = extension_risks(G, coef, lraw, probs, beta)
            risk[~avail] = np.inf
            cand = np.flatnonzero(risk <= risk.min() + cfg.tie_epsilon)
            risk = risk[cand]
        else:
            cand = np.flatnonzero(avail)
            risk = cvar_rows(np.maximum(0.0, lraw - G[cand] * coef), probs, beta)
        tied = cand[risk <= risk.min() + cfg.tie_epsilon]
        if len(tied) > 1:
            if rng is not None:
                tied = tied[[rng.integers(len(tied))]]
            else:
                iw = G[tied] @ (coef * probs)
                tied = tied[iw >= iw.max() - _band(iw.max())]
        d = int(tied[np.argmin(inst.id_rank[tied])])
        state.add(d)
        return d

    return _greedy(inst, k, step)


def _coef(state) -> np.ndarray:
    mdl = state.model
    coef = mdl.w[state.t] * mdl.scale
    return coef * state.survive if mdl.cascade else coef


def xquad(inst: QueryInstance, k: int, cfg: DiversifierConfig = DiversifierConfig()) -> Ranking:
    """xQuAD on relevance normalized to [0, 1] by ``rel_max``."""
    rhat = inst.rel / inst.rel_max
    rel = inst.raw_relevances / inst.rel_max
    wanted = inst.probs.copy()  # P(c|q) times the probability c is still unserved

    def step(avail, _):
        nonlocal wanted
        d = _pick_max((1.0 - cfg.lam) * rel + cfg.lam * (rhat @ wanted), avail, inst.id_rank)
        wanted = wanted * (1.0 - rhat[d])
        return d

    return _greedy(inst, k, step)


def ia_select(inst: QueryInstance, k: int) -> Ranking:
    """IA-Select with residual intent weights U(c) <- U(c) (1 - r(d, c))."""
    rhat = inst.rel / inst.rel_max
    U = inst.probs.copy()

    def step(avail, _):
        nonlocal U
        d = _pick_max(rhat @ U, avail, inst.id_rank)
        U = U * (1.0 - rhat[d])
        return d

    return _greedy(inst, k, step)


CR_SMOOTHING = 0.01


def calibrated_rerank(inst: QueryInstance, k: int, cfg: DiversifierConfig = DiversifierConfig()) -> Ranking:
    """Calibrated re-ranking against the intent distribution.

    Maximizes ``(1 - lam) * sum of raw relevance - lam * KL(P || Q)`` where Q
    is the per-intent relevance share of the ranking, mixed 1% toward P so
    the divergence stays finite.
    """
    P = inst.probs
    rel = inst.rel
    raw = inst.raw_relevances
    support = P > 0
    mass = np.zeros(inst.n_intents)
    total_rel = 0.0

    def kl(Q: np.ndarray) -> np.ndarray:
        tot = Q.sum(axis=1, keepdims=True)
        Q = np.divide(Q, tot, out=np.full_like(Q, 1.0 / Q.shape[1]), where=tot > 0)
        Q = (1.0 - CR_SMOOTHING) * Q + CR_SMOOTHING * P
        return (P[support] * np.log(P[support] / Q[:, support])).sum(axis=1)

    def step(avail, _):
        nonlocal mass, total_rel
        score = (1.0 - cfg.lam) * (total_rel + raw) - cfg.lam * kl(mass + rel)
        d = _pick_max(score, avail, inst.id_rank)
        mass = mass + rel[d]
        total_rel += raw[d]
        return d

    return _greedy(inst, k, step)


class TfidfSimilarity:
    """Cosine similarity of TF-IDF vectors over lowercased whitespace tokens."""

    def __init__(self, texts):
        from sklearn.feature_extraction.text import TfidfVectorizer

        texts = ["" if t is None else str(t) for t in texts]
        self.n = len(texts)
        if any(t.split() for t in texts):
            vec = TfidfVectorizer(lowercase=True, tokenizer=str.split, token_pattern=None)
            self.X = vec.fit_transform(texts).tocsr()
        else:
            self.X = None

    @classmethod
    def for_instance(cls, inst: QueryInstance) -> "TfidfSimilarity":
        if inst.doc_features is None or all(f is None for f in inst.doc_features):
            raise InstanceError(f"query {inst.query_id!r} has no document features for similarity")
        return cls(inst.doc_features)

    def sim_to(self, i: int) -> np.ndarray:
        if self.X is None:
            s = np.zeros(self.n)
        else:
            s = np.asarray((self.X @ self.X[i].T).todense()).ravel()
            s = np.clip(s, 0.0, 1.0)
        s[i] = 1.0
        return s

    def matrix(self) -> np.ndarray:
        return np.vstack([self.sim_to(i) for i in range(self.n)])


def mmr(
    inst: QueryInstance,
    k: int,
    sim: Optional[TfidfSimilarity] = None,
    cfg: DiversifierConfig = DiversifierConfig(),
) -> Ranking:
    """Maximal marginal relevance; the first pick is by relevance alone."""
    if sim is None:
        sim = TfidfSimilarity.for_instance(inst)
    rel = inst.raw_relevances / inst.rel_max
    closest = np.zeros(inst.n_docs)

    def step(avail, chosen):
        nonlocal closest
        score = rel if not chosen else (1.0 - cfg.lam) * rel - cfg.lam * closest
        d = _pick_max(score, avail, inst.id_rank)
        closest = np.maximum(closest, sim.sim_to(d))
        return d

    return _greedy(inst, k, step)


METHODS = ("naive", "iw_greedy", "vrisker", "xquad", "mmr", "ia_select", "cr")

"""Loaders, synthetic instances and intent-probability noise.

Every loader returns validated :class:`QueryInstance` objects sorted by
query id.
"""

from __future__ import annotations

import csv
import json
import math
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    InstanceError,
    IntentDistribution,
    QueryInstance,
    RelevanceTable,
    validate_instance,
)


class FormatError(ValueError):
    """An input file does not follow its declared layout."""


# ---------------------------------------------------------------------------
# canonical JSON lines


def instance_to_record(inst: QueryInstance) -> dict:
    docs = []
    for i, d in enumerate(inst.docs):
        entry = {"id": d, "rel": [float(x) for x in inst.rel[i]]}
        if inst.doc_features is not None and inst.doc_features[i] is not None:
            entry["text"] = inst.doc_features[i]
        docs.append(entry)
    rec = {
        "query_id": inst.query_id,
        "intents": [{"id": c, "prob": float(p)} for c, p in zip(inst.intents, inst.probs)],
        "docs": docs,
        "rel_max": float(inst.rel_max),
    }
    if inst.rel_min != 0:
        rec["rel_min"] = float(inst.rel_min)
    return rec


def instance_from_record(rec: dict) -> QueryInstance:
    try:
        qid = str(rec["query_id"])
        intents = [str(c["id"]) for c in rec["intents"]]
        probs = [float(c["prob"]) for c in rec["intents"]]
        docs = [str(d["id"]) for d in rec["docs"]]
        rel = [[float(x) for x in d["rel"]] for d in rec["docs"]]
        texts = [d.get("text") for d in rec["docs"]]
        rel_max = float(rec["rel_max"])
        rel_min = float(rec.get("rel_min", 0.0))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed query record: {e!r}") from None
    if any(len(r) != len(intents) for r in rel):
        raise InstanceError(f"query {qid!r}: a doc's rel list does not match the {len(intents)} intents")
    table = np.array(rel, dtype=float).reshape(len(docs), len(intents))
    inst = QueryInstance(
        qid,
        IntentDistribution(tuple(intents), np.array(probs)),
        RelevanceTable(tuple(docs), table, rel_max, rel_min),
        tuple(texts) if any(t is not None for t in texts) else None,
    )
    return validate_instance(inst)


def load_canonical(path) -> list[QueryInstance]:
    out: dict[str, QueryInstance] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            try:
                inst = instance_from_record(rec)
            except FormatError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            if inst.query_id in out:
                raise FormatError(f"{path}:{lineno}: duplicate query_id {inst.query_id!r}")
            out[inst.query_id] = inst
    return [out[q] for q in sorted(out)]


def dump_canonical(instances: Iterable[QueryInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in sorted(instances, key=lambda i: i.query_id):
            fh.write(json.dumps(instance_to_record(inst), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# TREC Web diversity qrels


def _read_qrels(path) -> dict[str, dict[tuple[str, str], float]]:
    """topic -> {(intent, doc): max judgment, negatives clamped to 0}."""
    judged: dict[str, dict[tuple[str, str], float]] = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            topic, intent, doc, grade = parts
            try:
                g = float(grade)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric judgment {grade!r}") from None
            if not math.isfinite(g):
                raise FormatError(f"{path}:{lineno}: non-finite judgment {grade!r}")
            g = max(g, 0.0)
            key = (intent, doc)
            cur = judged[topic]
            cur[key] = max(cur.get(key, 0.0), g)
    return judged


def _read_topics(path) -> dict[str, list[str]]:
    """topic -> intent ids, from TREC topic XML or ``topic intent`` lines."""
    text = Path(path).read_text(encoding="utf-8")
    topics: dict[str, list[str]] = defaultdict(list)
    if text.lstrip().startswith("<"):
        try:
            root = ET.fromstring(text if "<webtrack" in text else f"<root>{text}</root>")
        except ET.ParseError as e:
            raise FormatError(f"{path}: invalid topic XML ({e})") from None
        for t in root.iter("topic"):
            tid = t.get("number")
            for s in t.iter("subtopic"):
                topics[str(tid)].append(str(s.get("number")))
        return topics
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise FormatError(f"{path}:{lineno}: expected 'topic intent'")
        topics[parts[0]].append(parts[1])
    return topics


def _intent_key(c: str):
    return (0, int(c), c) if c.lstrip("-").isdigit() else (1, 0, c)


def _from_judgments(
    judged: dict[str, dict[tuple[str, str], float]],
    topic_intents: Optional[dict[str, list[str]]] = None,
    probs: Optional[dict[str, dict[str, float]]] = None,
) -> list[QueryInstance]:
    grades = [g for j in judged.values() for g in j.values()]
    rel_max = max(grades, default=0.0)
    rel_max = rel_max if rel_max > 0 else 1.0
    out = []
    for topic in sorted(judged):
        j = judged[topic]
        intents = sorted({c for c, _ in j}, key=_intent_key)
        if topic_intents and topic in topic_intents:
            extra = [c for c in topic_intents[topic] if c not in intents]
            intents = sorted(set(intents) | set(extra), key=_intent_key)
        docs = sorted({d for _, d in j})
        ci = {c: i for i, c in enumerate(intents)}
        di = {d: i for i, d in enumerate(docs)}
        rel = np.zeros((len(docs), len(intents)))
        for (c, d), g in j.items():
            rel[di[d], ci[c]] = g
        if probs is None:
            p = np.full(len(intents), 1.0 / len(intents))
        else:
            tp = probs.get(topic)
            if tp is None:
                raise InstanceError(f"topic {topic!r}: no intent probabilities")
            p = np.array([tp.get(c, 0.0) for c in intents])
        inst = QueryInstance(
            topic,
            IntentDistribution(tuple(intents), p),
            RelevanceTable(tuple(docs), rel, rel_max, 0.0),
        )
        out.append(validate_instance(inst))
    return out


def load_trec_diversity(qrels_path, topics_path=None) -> list[QueryInstance]:
    """TREC Web diversity qrels with equally likely intents.

    Each line is ``topic intent doc judgment``. Repeated judgments keep the
    maximum and negative (spam) grades count as 0. ``rel_max`` is the
    largest grade in the file. The optional topics file adds intents that
    have no judged documents.
    """
    judged = _read_qrels(qrels_path)
    topics = _read_topics(topics_path) if topics_path else None
    return _from_judgments(judged, topics)


def load_ntcir_intents(qrels_path, probs_path) -> list[QueryInstance]:
    """Adapter for intent-probability corpora such as NTCIR INTENT-2.

    Expects qrels in the same four-column layout as the TREC loader and a
    probability file of ``topic intent prob`` lines. Converting an
    official distribution into these two files is left to the user.
    """
    probs: dict[str, dict[str, float]] = defaultdict(dict)
    with open(probs_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(f"{probs_path}:{lineno}: expected 'topic intent prob'")
            try:
                probs[parts[0]][parts[1]] = float(parts[2])
            except ValueError:
                raise FormatError(f"{probs_path}:{lineno}: non-numeric probability") from None
    return _from_judgments(_read_qrels(qrels_path), probs=probs)


# ---------------------------------------------------------------------------
# MovieLens


@dataclass(frozen=True)
class MovieLensOptions:
    min_ratings: int = 200
    candidates: str = "all"  # "all" catalog items, or only the user's "rated" items

    def __post_init__(self):
        if self.min_ratings < 1:
            raise ValueError("min_ratings must be at least 1")
        if self.candidates not in ("all", "rated"):
            raise ValueError(f"unknown candidate policy {self.candidates!r}")


_NO_GENRE = "(no genres listed)"


def _read_movies(path) -> dict[str, tuple[str, tuple[str, ...]]]:
    movies = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return movies
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            item, title, genres = row
            gs = tuple(sorted({g for g in genres.split("|") if g and g != _NO_GENRE}))
            movies[item] = (title, gs)
    return movies


def _read_ratings(path) -> dict[str, dict[str, float]]:
    users: dict[str, dict[str, float]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) is None:
            return users
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                r = float(row[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric rating {row[2]!r}") from None
            if not math.isfinite(r) or r < 0:
                raise FormatError(f"{path}:{lineno}: invalid rating {row[2]!r}")
            users[row[0]][row[1]] = r
    return users


def genre_profile(rated: Iterable[str], movies) -> dict[str, float]:
    """Historical genre shares; each rating spreads 1/|genres| over its genres."""
    mass: dict[str, float] = defaultdict(float)
    for item in rated:
        gs = movies.get(item, ("", ()))[1]
        for g in gs:
            mass[g] += 1.0 / len(gs)
    total = sum(mass.values())
    return {g: v / total for g, v in sorted(mass.items())} if total > 0 else {}


def load_movielens(ratings_path, movies_path, opts: MovieLensOptions = MovieLensOptions()) -> list[QueryInstance]:
    """One query per user with more than ``opts.min_ratings`` ratings.

    Intents are the genres in the user's history. A candidate d with genres
    C(d) gets rel(d, c) = rating / sum of P(c') over C(d) for c in C(d), so
    the probability-weighted sum over intents recovers the rating exactly.
    Unrated candidates have rating 0. Items without any of the user's
    genres are dropped. ``rel_max`` is the largest entry of each user's table.
    """
    movies = _read_movies(movies_path)
    users = _read_ratings(ratings_path)
    catalog = sorted(movies)
    out = []
    for user in sorted(users):
        ratings = users[user]
        if len(ratings) <= opts.min_ratings:
            continue
        unknown = [i for i in ratings if i not in movies]
        if unknown:
            raise FormatError(f"user {user!r} rated unknown item {unknown[0]!r}")
        prof = genre_profile(ratings, movies)
        if not prof:
            raise InstanceError(f"user {user!r}: no genre mass in rating history")
        intents = list(prof)
        gi = {g: j for j, g in enumerate(intents)}
        p = np.array([prof[g] for g in intents])
        pool = catalog if opts.candidates == "all" else sorted(ratings)
        docs, rows, texts = [], [], []
        for item in pool:
            title, gs = movies[item]
            cols = [gi[g] for g in gs if g in gi]
            gmass = float(p[cols].sum()) if cols else 0.0
            if gmass <= 0.0:
                continue
            row = np.zeros(len(intents))
            row[cols] = ratings.get(item, 0.0) / gmass
            docs.append(item)
            rows.append(row)
            texts.append(" ".join([title, *gs]))
        rel = np.array(rows).reshape(len(docs), len(intents))
        rel_max = float(rel.max()) if rel.size and rel.max() > 0 else 1.0
        inst = QueryInstance(
            user,
            IntentDistribution(tuple(intents), p),
            RelevanceTable(tuple(docs), rel, rel_max, 0.0),
            tuple(texts),
        )
        out.append(validate_instance(inst))
    return out


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseConfig:
    sigma2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.sigma2}")


def perturb_intents(inst: QueryInstance, noise: NoiseConfig, rng: Optional[np.random.Generator] = None) -> QueryInstance:
    """Add N(0, sigma2) to each intent probability, clip to [0, 1], renormalize.

    Falls back to the uniform distribution when every clipped value is 0.
    Only the distribution changes.
    """
    if noise.sigma2 == 0:
        return inst
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    eps = rng.normal(0.0, math.sqrt(noise.sigma2), size=inst.n_intents)
    p = np.clip(inst.probs + eps, 0.0, 1.0)
    total = p.sum()
    p = p / total if total > 0 else np.full(inst.n_intents, 1.0 / inst.n_intents)
    return inst.with_probs(p)


# ---------------------------------------------------------------------------
# synthetic instances


@dataclass(frozen=True)
class SynthParams:
    """Knobs for :func:`synth_generate`.

    ``density`` is the chance a (doc, intent) grade is drawn at all (the
    rest are 0). ``majority_prob`` pins one intent's probability and spreads
    the remainder with the Dirichlet.
    """

    dirichlet_alpha: float = 1.0
    rel_max: int = 4
    density: Optional[float] = None
    majority_prob: Optional[float] = None
    with_text: bool = True

    def __post_init__(self):
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.rel_max < 1:
            raise ValueError("rel_max must be at least 1")
        if self.density is not None and not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")
        if self.majority_prob is not None and not 0.0 < self.majority_prob <= 1.0:
            raise ValueError("majority_prob must lie in (0, 1]")


_FILLER = ("alpha", "bravo", "delta", "echo", "golf", "hotel", "kilo", "lima", "oscar", "tango")


def synth_generate(
    n_docs: int,
    n_intents: int,
    k: int,
    params: SynthParams = SynthParams(),
    seed=0,
    query_id: str = "q0",
) -> QueryInstance:
    """Reproducible random instance with integer grades in [0, rel_max]."""
    if not n_docs >= k >= 1:
        raise ValueError(f"need n_docs >= k >= 1, got n_docs={n_docs}, k={k}")
    if n_intents < 1:
        raise ValueError("need at least one intent")
    rng = np.random.default_rng(seed)
    m = n_intents
    if m == 1:
        p = np.ones(1)
    elif params.majority_prob is not None:
        rest = rng.dirichlet(np.full(m - 1, params.dirichlet_alpha)) * (1.0 - params.majority_prob)
        p = np.concatenate([[params.majority_prob], rest])
    else:
        p = rng.dirichlet(np.full(m, params.dirichlet_alpha))
    rel = rng.integers(0, params.rel_max + 1, size=(n_docs, m)).astype(float)
    if params.density is not None:
        rel *= rng.random((n_docs, m)) < params.density
    intents = tuple(f"c{j + 1}" for j in range(m))
    width = len(str(n_docs))
    docs = tuple(f"d{i + 1:0{width}d}" for i in range(n_docs))
    texts = None
    if params.with_text:
        texts = tuple(_synth_text(rel[i], intents, rng) for i in range(n_docs))
    inst = QueryInstance(
        str(query_id),
        IntentDistribution(intents, p),
        RelevanceTable(docs, rel, float(params.rel_max), 0.0),
        texts,
    )
    return validate_instance(inst)


def _synth_text(row: np.ndarray, intents: Sequence[str], rng: np.random.Generator) -> str:
    words = [f"topic{c}" for c, g in zip(intents, row) for _ in range(int(g))]
    words += list(rng.choice(_FILLER, size=2))
    return " ".join(words)


def synth_corpus(
    n_queries: int,
    n_docs: int,
    n_intents: int,
    k: int,
    params: SynthParams = SynthParams(),
    seed: int = 0,
) -> list[QueryInstance]:
    """``n_queries`` independent instances with ids q0001, q0002, ..."""
    seeds = np.random.SeedSequence(seed).spawn(n_queries)
    width = max(4, len(str(n_queries)))
    return [
        synth_generate(n_docs, n_intents, k, params, np.random.default_rng(s), f"q{i + 1:0{width}d}")
        for i, s in enumerate(seeds)
    ]

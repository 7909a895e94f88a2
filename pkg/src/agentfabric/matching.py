"""Three-stage agent matching: similarity retrieval, semantic gate, multi-feature rank.

Stage I keeps cards whose embedding cosine with the task is strictly above
``candidate_threshold``. Stage II attaches a pluggable semantic score in
[0, 1] and keeps scores at or above ``filter_threshold``. Stage III orders the
survivors by ``alpha*semantic + beta*trust + gamma*f(capabilities) +
delta*history``.
"""
from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .reputation import AgentCard, composite_reputation
from .tasks import TaskRequest

log = logging.getLogger(__name__)

MATCH_HEADER = ("task_id", "stage", "agent_id", "score")
DEFAULT_LOAD_CAP = 10.0

SemanticScorer = Callable[[TaskRequest, AgentCard], float]


class NoMatch(LookupError):
    """A pipeline stage emptied the candidate set."""

    def __init__(self, stage: str, counts: dict[str, int]):
        super().__init__(f"no agents left after {stage} stage (counts={counts})")
        self.stage = stage
        self.counts = counts


@dataclass(frozen=True)
class RankWeights:
    alpha: float = 0.4
    beta: float = 0.3
    gamma: float = 0.2
    delta: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"rank weight {name}={v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.delta)


@dataclass(frozen=True)
class MatchThresholds:
    candidate_threshold: float = 0.0
    filter_threshold: float = 0.5
    top_k: int = 5

    def __post_init__(self):
        for name in ("candidate_threshold", "filter_threshold"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [-1, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")


@dataclass(frozen=True)
class CapabilityVector:
    success_rate: float
    inverse_latency: float
    availability: float
    inverse_load: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.success_rate, self.inverse_latency, self.availability, self.inverse_load)


@dataclass(frozen=True)
class RuntimeStats:
    success_rate: float
    latency: float
    availability: float
    load: float


@dataclass(frozen=True)
class Candidate:
    card: AgentCard
    similarity: float


@dataclass(frozen=True)
class Filtered:
    card: AgentCard
    similarity: float
    semantic_score: float


@dataclass(frozen=True)
class Ranked:
    agent_id: int
    score: float
    features: tuple[float, float, float, float]


@dataclass
class MatchResult:
    ranked: list[Ranked]
    counts: dict[str, int]
    rows: list[tuple]


# -- embeddings ---------------------------------------------------------------

def _tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def embed_tags(tags: Iterable[str], dimension: int) -> np.ndarray:
    """Signed feature-hashing embedding of a tag bag, unit length unless empty."""
    if dimension < 8:
        raise ValueError("embedding dimension must be at least 8")
    vec = np.zeros(dimension)
    for tag in sorted(set(tags)):
        h = _tag_hash(tag)
        vec[h % dimension] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0:
        warnings.warn("empty tag bag (or full hash cancellation) embeds to the zero vector",
                      RuntimeWarning, stacklevel=3)
        return vec
    return vec / norm


def embed_card(card: AgentCard, dimension: int) -> np.ndarray:
    return embed_tags(card.tags, dimension)


def embed_task(request: TaskRequest, dimension: int) -> np.ndarray:
    return embed_tags(request.requirement_tags, dimension)


def similarity(q: np.ndarray, m: np.ndarray) -> float:
    if q.shape != m.shape:
        raise ValueError(f"dimension mismatch {q.shape} vs {m.shape}")
    nq, nm = np.linalg.norm(q), np.linalg.norm(m)
    if nq == 0 or nm == 0:
        return 0.0
    return float(np.dot(q, m) / (nq * nm))


# -- stage I --------------------------------------------------------------------

class CandidateSource(Protocol):
    def candidates(self, q: np.ndarray, threshold: float) -> list[Candidate]: ...


class ExactScan:
    """Brute-force cosine scan; stands in for an approximate index."""

    def __init__(self, population: Sequence[tuple[AgentCard, np.ndarray]]):
        self.cards = [c for c, _ in population]
        mat = np.array([e for _, e in population], dtype=float)
        if mat.ndim != 2:
            mat = mat.reshape(len(self.cards), -1)
        norms = np.linalg.norm(mat, axis=1)
        self._unit = np.divide(mat, norms[:, None], out=np.zeros_like(mat), where=norms[:, None] > 0)
        self._ids = np.array([c.id for c in self.cards])

    def candidates(self, q: np.ndarray, threshold: float) -> list[Candidate]:
        if self._unit.shape[0] == 0:
            return []
        if q.shape[0] != self._unit.shape[1]:
            raise ValueError("query dimension does not match the population")
        nq = np.linalg.norm(q)
        sims = self._unit @ (q / nq) if nq > 0 else np.zeros(len(self.cards))
        keep = np.flatnonzero(sims > threshold)
        order = keep[np.lexsort((self._ids[keep], -sims[keep]))]
        return [Candidate(self.cards[i], float(sims[i])) for i in order]


def generate_candidates(population: Sequence[tuple[AgentCard, np.ndarray]], q: np.ndarray,
                        threshold: float) -> list[Candidate]:
    return ExactScan(population).candidates(q, threshold)


# -- stage II -------------------------------------------------------------------

def overlap_scorer(request: TaskRequest, card: AgentCard) -> float:
    """Fraction of the task's required tags the card advertises."""
    need = request.requirement_tags
    if not need:
        return 0.0
    return len(need & card.tags) / len(need)


def semantic_filter(candidates: Iterable[Candidate], request: TaskRequest,
                    scorer: SemanticScorer, threshold: float) -> list[Filtered]:
    kept = []
    for c in candidates:
        try:
            score = float(scorer(request, c.card))
        except Exception:
            log.warning("semantic scorer failed for agent %s; excluded", c.card.id, exc_info=True)
            continue
        if not 0.0 <= score <= 1.0 or math.isnan(score):
            log.warning("semantic scorer returned %r for agent %s; excluded", score, c.card.id)
            continue
        if score >= threshold:
            kept.append(Filtered(c.card, c.similarity, score))
    return kept


# -- stage III ------------------------------------------------------------------

def capability_vector(stats: RuntimeStats, load_cap: float = DEFAULT_LOAD_CAP) -> CapabilityVector:
    if stats.latency <= 0:
        raise ValueError(f"latency must be positive, got {stats.latency}")
    if stats.load < 0:
        raise ValueError(f"load must be non-negative, got {stats.load}")
    if stats.load == 0:
        log.debug("idle agent: inverse load capped at %s", load_cap)
        inv_load = load_cap
    else:
        inv_load = min(1.0 / stats.load, load_cap)
    return CapabilityVector(stats.success_rate, 1.0 / stats.latency, stats.availability, inv_load)


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(axis=0), values.max(axis=0)
    span = hi - lo
    return np.where(span > 0, (values - lo) / np.where(span > 0, span, 1.0), 0.5)


def normalize_capabilities(c: CapabilityVector, population: Sequence[CapabilityVector]) -> float:
    """Min-max normalise each component over ``population`` and average the four."""
    if not population:
        raise ValueError("capability population is empty")
    mat = np.array([p.as_tuple() for p in population] + [c.as_tuple()], dtype=float)
    return float(_minmax(mat)[-1].mean())


def capability_scores(capabilities: Mapping[int, CapabilityVector]) -> dict[int, float]:
    """``normalize_capabilities`` for every agent at once, over the same population."""
    ids = sorted(capabilities)
    if not ids:
        return {}
    mat = np.array([capabilities[i].as_tuple() for i in ids], dtype=float)
    return dict(zip(ids, _minmax(mat).mean(axis=1).tolist()))


def history_similarity(request: TaskRequest, card: AgentCard) -> float:
    past = card.reputation.history_tags
    need = request.requirement_tags
    if not past or not need:
        return 0.0
    return len(need & past) / len(need | past)


def ranking_score(features: Sequence[float], weights: RankWeights) -> float:
    a, b, g, d = weights.as_tuple()
    s, t, f, h = features
    return a * s + b * t + g * f + d * h


def rank(filtered: Sequence[Filtered], capabilities: Mapping[int, CapabilityVector], trust,
         request: TaskRequest, weights: RankWeights,
         capability_score: Mapping[int, float] | None = None) -> list[Ranked]:
    """Order agents by the weighted four-feature score.

    ``trust`` is anything indexable by agent id. Capabilities are normalised
    over the whole ``capabilities`` mapping, not just ``filtered``, so scores
    do not depend on which agents survived earlier stages. Ties fall back to
    composite reputation (higher first), then agent id.
    """
    if capability_score is None:
        capability_score = capability_scores(capabilities)
    out = []
    for f in filtered:
        aid = f.card.id
        if aid not in capabilities:
            raise KeyError(f"agent {aid} has no capability stats")
        try:
            t = float(trust[aid])
        except (KeyError, IndexError) as exc:
            raise KeyError(f"agent {aid} has no trust score") from exc
        feats = (f.semantic_score, t, capability_score[aid], history_similarity(request, f.card))
        out.append((Ranked(aid, ranking_score(feats, weights), feats), composite_reputation(f.card.reputation)))
    out.sort(key=lambda pair: (-pair[0].score, -pair[1], pair[0].agent_id))
    return [r for r, _ in out]


def match_pipeline(population: Sequence[tuple[AgentCard, np.ndarray]], request: TaskRequest,
                   scorer: SemanticScorer, thresholds: MatchThresholds, weights: RankWeights,
                   trust, capabilities: Mapping[int, CapabilityVector], dimension: int | None = None,
                   source: CandidateSource | None = None,
                   capability_score: Mapping[int, float] | None = None) -> MatchResult:
    if not population:
        raise ValueError("matching population is empty")
    if dimension is None:
        dimension = len(population[0][1])
    q = embed_task(request, dimension)
    source = source or ExactScan(population)
    cands = source.candidates(q, thresholds.candidate_threshold)
    counts = {"candidates": len(cands)}
    rows = [(request.id, "candidates", c.card.id, c.similarity) for c in cands]
    if not cands:
        raise NoMatch("candidates", counts)
    filtered = semantic_filter(cands, request, scorer, thresholds.filter_threshold)
    counts["filtered"] = len(filtered)
    rows += [(request.id, "filtered", f.card.id, f.semantic_score) for f in filtered]
    if not filtered:
        raise NoMatch("filtered", counts)
    ranked = rank(filtered, capabilities, trust, request, weights, capability_score)[: thresholds.top_k]
    counts["ranked"] = len(ranked)
    rows += [(request.id, "ranked", r.agent_id, r.score) for r in ranked]
    return MatchResult(ranked, counts, rows)

import logging
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from agentfabric.matching import (Candidate, CapabilityVector, ExactScan, Filtered, MatchThresholds, NoMatch,
                                  RankWeights, RuntimeStats, capability_scores, capability_vector, embed_card,
                                  embed_tags, embed_task, generate_candidates, history_similarity,
                                  match_pipeline, normalize_capabilities, overlap_scorer, rank, ranking_score,
                                  semantic_filter, similarity)
from agentfabric.reputation import AgentCard, ReputationRecord
from agentfabric.tasks import TaskRequest

VOCAB = [f"t{i}" for i in range(40)]


def request(tags, rid="q"):
    return TaskRequest(rid, "", 10, requirement_tags=frozenset(tags))


def random_population(n, rng, dim=64, history=False):
    cards = []
    for i in range(n):
        tags = set(rng.choice(VOCAB, size=rng.integers(1, 6), replace=False).tolist())
        rep = ReputationRecord(*rng.random(4).tolist(), rating_count=int(rng.integers(0, 3)))
        if history:
            rep.tag_classes = {frozenset(rng.choice(VOCAB, size=3, replace=False).tolist())}
        cards.append(AgentCard(i, tags, reputation=rep))
    with warnings.catch_warnings():
        # colliding opposite-sign buckets can cancel a small bag to zero
        warnings.simplefilter("ignore", RuntimeWarning)
        return [(c, embed_card(c, dim)) for c in cards]


def random_caps(ids, rng):
    return {i: CapabilityVector(rng.random(), 1 / (0.1 + rng.random()), rng.random(), rng.random() * 10)
            for i in ids}


# -- embeddings and similarity ----------------------------------------------------

def test_embeddings_deterministic_and_unit():
    a = embed_tags({"x", "y"}, 32)
    assert np.array_equal(a, embed_tags(["y", "x"], 32))
    assert np.linalg.norm(a) == pytest.approx(1.0)
    card = AgentCard(0, {"x", "y"})
    assert similarity(embed_task(request({"x", "y"}), 32), embed_card(card, 32)) == pytest.approx(1.0)


def test_empty_tags_warn_zero_vector():
    with pytest.warns(RuntimeWarning):
        v = embed_card(AgentCard(0, set()), 16)
    assert not v.any()
    with pytest.warns(RuntimeWarning):
        assert not embed_task(request(set()), 16).any()


def test_dimension_floor():
    with pytest.raises(ValueError):
        embed_tags({"a"}, 4)


def test_disjoint_tag_sets_nearly_orthogonal():
    rng = np.random.default_rng(0)
    sims = []
    for k in range(1000):
        a = {f"a{k}_{i}" for i in range(20)}
        b = {f"b{k}_{i}" for i in range(20)}
        sims.append(abs(similarity(embed_tags(a, 256), embed_tags(b, 256))))
    assert np.mean(np.array(sims) < 0.3) > 0.99


def test_similarity_examples():
    assert similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(1 / math.sqrt(2))
    assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0
    v = np.array([0.3, -2.0, 5.0])
    assert similarity(v, v) == pytest.approx(1.0)
    assert similarity(np.zeros(3), v) == 0
    with pytest.raises(ValueError):
        similarity(np.zeros(2), np.zeros(3))


# -- stage I ------------------------------------------------------------------------

def test_threshold_extremes():
    rng = np.random.default_rng(1)
    pop = random_population(50, rng)
    q = embed_task(request({"t1", "t2"}), 64)
    top = generate_candidates(pop, q, 1.0)
    assert all(c.similarity > 1.0 for c in top)
    everyone = generate_candidates(pop, q, -1.0)
    assert len(everyone) == sum(1 for _, e in pop if similarity(q, e) > -1.0)
    sims = [c.similarity for c in everyone]
    assert sims == sorted(sims, reverse=True)


def test_ties_broken_by_id():
    cards = [AgentCard(i, {"same"}) for i in (5, 2, 9)]
    pop = [(c, embed_card(c, 16)) for c in cards]
    out = generate_candidates(pop, embed_tags({"same"}, 16), 0.0)
    assert [c.card.id for c in out] == [2, 5, 9]


def test_candidates_match_brute_force_oracle():
    rng = np.random.default_rng(7)
    pop = random_population(10_000, rng, dim=128)
    q = embed_task(request({"t3", "t4", "t5"}), 128)
    got = {c.card.id for c in generate_candidates(pop, q, 0.4)}

    def cosine(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(y * y for y in b))
        return dot / (na * nb) if na and nb else 0.0

    qs = q.tolist()
    expected, borderline = set(), set()
    for card, emb in pop:
        s = cosine(qs, emb.tolist())
        if abs(s - 0.4) < 1e-9:
            borderline.add(card.id)
        elif s > 0.4:
            expected.add(card.id)
    assert got - borderline == expected


# -- stage II -----------------------------------------------------------------------

def test_filter_examples(caplog):
    cands = [Candidate(AgentCard(i, {"a"}), 0.5) for i in range(4)]
    r = request({"a", "b"})
    assert len(semantic_filter(cands, r, lambda *_: 1.0, 0.5)) == 4
    assert semantic_filter(cands, r, lambda *_: 0.0, 0.5) == []
    assert overlap_scorer(r, AgentCard(0, {"a"})) == 0.5
    kept = semantic_filter(cands, r, overlap_scorer, 0.5)
    assert [f.semantic_score for f in kept] == [0.5] * 4

    def flaky(req, card):
        if card.id == 2:
            raise RuntimeError("model timeout")
        return 0.9

    with caplog.at_level(logging.WARNING):
        kept = semantic_filter(cands, r, flaky, 0.5)
    assert [f.card.id for f in kept] == [0, 1, 3]
    assert "agent 2" in caplog.text


# -- stage III ----------------------------------------------------------------------

def test_capability_vector_examples():
    assert capability_vector(RuntimeStats(1, 1, 1, 1)).as_tuple() == (1, 1, 1, 1)
    assert capability_vector(RuntimeStats(1, 4, 1, 1)).inverse_latency == 0.25
    assert capability_vector(RuntimeStats(1, 1, 1, 0)).inverse_load == 10.0
    assert capability_vector(RuntimeStats(1, 1, 1, 0.1)).inverse_load == pytest.approx(10.0)
    with pytest.raises(ValueError):
        capability_vector(RuntimeStats(1, 0, 1, 1))


def test_normalization_examples():
    hi, lo = CapabilityVector(1, 2, 1, 3), CapabilityVector(0, 1, 0.5, 1)
    mid = CapabilityVector(0.5, 1.5, 0.7, 2)
    assert normalize_capabilities(hi, [hi, lo, mid]) == 1.0
    assert normalize_capabilities(lo, [hi, lo, mid]) == 0.0
    assert capability_scores({1: hi, 2: lo}) == {1: 1.0, 2: 0.0}
    assert normalize_capabilities(mid, [mid]) == 0.5


def test_history_examples():
    card = AgentCard(0, {"a"})
    assert history_similarity(request({"a"}), card) == 0.0
    card.reputation.tag_classes = {frozenset({"a", "b"})}
    assert history_similarity(request({"a", "b"}), card) == 1.0
    assert history_similarity(request({"b", "c"}), card) == pytest.approx(1 / 3)


def test_ranking_score_example():
    assert ranking_score((0.8, 0.6, 1.0, 0.2), RankWeights(0.25, 0.25, 0.25, 0.25)) == pytest.approx(0.65)


def test_rank_weight_validation():
    RankWeights(1, 1, 1, 1)
    with pytest.raises(ValueError):
        RankWeights(1.5, 0, 0, 0)


def _filtered_population(rng, n=30):
    pop = random_population(n, rng, history=True)
    flt = [Filtered(c, 0.0, float(rng.random())) for c, _ in pop]
    caps = random_caps([c.id for c, _ in pop], rng)
    trust = rng.random(n)
    return flt, caps, trust


def test_single_feature_projections():
    rng = np.random.default_rng(3)
    flt, caps, trust = _filtered_population(rng)
    r = request({"t1"})
    by_sem = [f.card.id for f in sorted(flt, key=lambda f: -f.semantic_score)]
    assert [x.agent_id for x in rank(flt, caps, trust, r, RankWeights(1, 0, 0, 0))] == by_sem
    by_trust = sorted(range(len(flt)), key=lambda i: -trust[i])
    assert [x.agent_id for x in rank(flt, caps, trust, r, RankWeights(0, 1, 0, 0))] == by_trust


def test_rank_missing_features():
    rng = np.random.default_rng(4)
    flt, caps, trust = _filtered_population(rng, 5)
    del caps[2]
    with pytest.raises(KeyError):
        rank(flt, caps, trust, request({"t1"}), RankWeights())
    with pytest.raises(KeyError):
        rank(flt, random_caps(range(5), rng), trust[:3], request({"t1"}), RankWeights())


def test_rank_ties_use_reputation_then_id():
    cards = [AgentCard(i, {"a"}, reputation=ReputationRecord(*(v,) * 4, rating_count=1))
             for i, v in ((0, 0.2), (1, 0.9), (2, 0.9))]
    flt = [Filtered(c, 0.0, 0.5) for c in cards]
    caps = {i: CapabilityVector(1, 1, 1, 1) for i in range(3)}
    out = rank(flt, caps, [0.5] * 3, request({"a"}), RankWeights())
    assert [r.agent_id for r in out] == [1, 2, 0]


# -- pipeline -----------------------------------------------------------------------

def test_pipeline_permissive_equals_exhaustive_ranking():
    rng = np.random.default_rng(11)
    pop = random_population(200, rng, history=True)
    caps = random_caps(range(200), rng)
    trust = rng.random(200)
    r = request({"t1", "t2", "t3"})
    w = RankWeights(0.4, 0.3, 0.2, 0.1)
    # -1 would drop an exact antipode only; none exist with positive-sign collisions here
    res = match_pipeline(pop, r, overlap_scorer, MatchThresholds(-1.0, 0.0, 200), w, trust, caps)
    q = embed_task(r, 64)
    scores = capability_scores(caps)
    oracle = []
    for card, emb in pop:
        if similarity(q, emb) <= -1.0:
            continue
        feats = (len(r.requirement_tags & card.tags) / 3, trust[card.id], scores[card.id],
                 history_similarity(r, card))
        s = sum(a * b for a, b in zip(w.as_tuple(), feats))
        rep = sum(card.reputation.axis_scores) / 4 if card.reputation.rating_count else 0.5
        oracle.append((-s, -rep, card.id))
    oracle.sort()
    assert [x.agent_id for x in res.ranked] == [i for *_, i in oracle]
    assert res.counts["candidates"] >= res.counts["filtered"] >= res.counts["ranked"]


def test_pipeline_no_match_stages():
    rng = np.random.default_rng(12)
    pop = random_population(20, rng)
    caps = random_caps(range(20), rng)
    r = request({"t1"})
    with pytest.raises(NoMatch) as info:
        match_pipeline(pop, r, lambda *_: 0.5, MatchThresholds(-1.0, 0.9, 5), RankWeights(), [0.5] * 20, caps)
    assert info.value.stage == "filtered"
    with pytest.raises(NoMatch) as info:
        match_pipeline(pop, request({"absent-tag"}), overlap_scorer, MatchThresholds(1.0, 0.0, 5),
                       RankWeights(), [0.5] * 20, caps)
    assert info.value.stage == "candidates"
    with pytest.raises(ValueError):
        match_pipeline([], r, overlap_scorer, MatchThresholds(), RankWeights(), [], {})


def test_pipeline_uses_pluggable_source():
    class Fixed:
        def candidates(self, q, threshold):
            return [Candidate(AgentCard(99, {"t1"}), 0.7)]

    res = match_pipeline([(AgentCard(0, {"t1"}), embed_tags({"t1"}, 16))], request({"t1"}), overlap_scorer,
                         MatchThresholds(0.0, 0.0, 3), RankWeights(), {99: 0.5},
                         {99: CapabilityVector(1, 1, 1, 1)}, source=Fixed())
    assert [r.agent_id for r in res.ranked] == [99]


@given(seed=st.integers(0, 2**32), t0=st.floats(-1, 1), t0b=st.floats(-1, 1),
       t1=st.floats(0, 1), t1b=st.floats(0, 1))
def test_threshold_and_stage_monotonicity(seed, t0, t0b, t1, t1b):
    rng = np.random.default_rng(seed)
    pop = random_population(40, rng)
    q = embed_task(request({"t1", "t2"}), 64)
    lo0, hi0 = sorted((t0, t0b))
    lo1, hi1 = sorted((t1, t1b))
    wide = generate_candidates(pop, q, lo0)
    narrow = generate_candidates(pop, q, hi0)
    assert {c.card.id for c in narrow} <= {c.card.id for c in wide}
    r = request({"t1", "t2"})
    f_lo = semantic_filter(wide, r, overlap_scorer, lo1)
    f_hi = semantic_filter(wide, r, overlap_scorer, hi1)
    assert {f.card.id for f in f_hi} <= {f.card.id for f in f_lo} <= {c.card.id for c in wide}
    caps = random_caps(range(40), rng)
    top = rank(f_lo, caps, rng.random(40), r, RankWeights())[:5]
    assert {x.agent_id for x in top} <= {f.card.id for f in f_lo}


@given(seed=st.integers(0, 2**32), scale=st.floats(0.01, 100),
       w=st.tuples(*[st.floats(0, 1)] * 4))
def test_argmax_invariance_and_bounds(seed, scale, w):
    rng = np.random.default_rng(seed)
    feats = rng.random((25, 4))
    weights = RankWeights(*w)
    base = [ranking_score(f, weights) for f in feats]
    scaled = [ranking_score(f * scale, weights) for f in feats]
    assert np.array_equal(np.argsort(base, kind="stable"), np.argsort(scaled, kind="stable")) or \
        np.allclose(np.array(scaled), np.array(base) * scale)
    assert int(np.argmax(base)) == int(np.argmax(scaled)) or math.isclose(max(base), sorted(base)[-2])
    assert all(-1e-12 <= s <= sum(w) + 1e-12 for s in base)


def test_pipeline_deterministic():
    rng = np.random.default_rng(5)
    pop = random_population(100, rng, history=True)
    caps = random_caps(range(100), rng)
    trust = rng.random(100)
    args = (pop, request({"t1", "t9"}), overlap_scorer, MatchThresholds(0.0, 0.0, 10), RankWeights(), trust, caps)
    assert match_pipeline(*args).rows == match_pipeline(*args).rows

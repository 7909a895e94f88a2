"""Probabilistic push gossip with a round TTL and request de-duplication.

Every informed node re-transmits to each neighbor with probability ``p`` in
every round until the TTL is spent. Duplicate deliveries count as messages
but do not change state. The analytic helpers evaluate the first-order
expectations used to sanity-check ensembles of runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .topology import Graph

TRACE_HEADER = ("trial", "round", "informed", "messages")


@dataclass(frozen=True)
class GossipParams:
    forward_probability: float
    ttl: int
    request_count: int = 1

    def __post_init__(self):
        if not 0.0 <= self.forward_probability <= 1.0:
            raise ValueError(f"forward_probability must be in [0, 1], got {self.forward_probability}")
        if self.ttl < 0:
            raise ValueError(f"ttl must be non-negative, got {self.ttl}")
        if self.request_count < 1:
            raise ValueError(f"request_count must be positive, got {self.request_count}")


@dataclass(frozen=True)
class GossipState:
    """Informed set of one request after ``round`` synchronous rounds.

    ``mask`` is the boolean membership vector of S(t); ``seen`` holds, per
    node, every request id that node has accepted (possibly shared across
    requests).
    """

    request_id: str
    mask: np.ndarray
    round: int
    seen: tuple[frozenset[str], ...]
    messages_per_round: tuple[int, ...] = ()
    ttl_exhausted: bool = False

    @property
    def informed(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.mask).tolist())

    @property
    def size(self) -> int:
        return int(self.mask.sum())


class TraceRow(NamedTuple):
    round: int
    informed: int
    messages: int


def init_gossip(g: Graph, seed_nodes, params: GossipParams, request_id: str = "r0",
                seen: Sequence[frozenset[str]] | None = None) -> GossipState:
    seeds = sorted(set(seed_nodes))
    if not seeds:
        raise ValueError("gossip needs at least one seed node")
    bad = [s for s in seeds if not 0 <= s < g.node_count]
    if bad:
        raise ValueError(f"invalid seed node ids {bad}")
    if seen is None:
        seen = tuple(frozenset() for _ in range(g.node_count))
    seen = list(seen)
    mask = np.zeros(g.node_count, dtype=bool)
    for i, ids in enumerate(seen):
        if request_id in ids:
            mask[i] = True
    mask[seeds] = True
    for s in seeds:
        seen[s] = seen[s] | {request_id}
    return GossipState(request_id, mask, 0, tuple(seen))


def gossip_step(state: GossipState, g: Graph, params: GossipParams,
                rng: np.random.Generator) -> GossipState:
    if state.round >= params.ttl:
        return replace(state, ttl_exhausted=True)
    src, dst = g.arcs
    active = state.mask[src]
    hits = rng.random(int(active.sum())) < params.forward_probability
    targets = dst[active][hits]
    mask = state.mask.copy()
    fresh = np.unique(targets[~mask[targets]])
    mask[fresh] = True
    seen = list(state.seen)
    for j in fresh.tolist():
        seen[j] = seen[j] | {state.request_id}
    return GossipState(state.request_id, mask, state.round + 1, tuple(seen),
                       state.messages_per_round + (int(hits.sum()),))


def _frontier_empty(state: GossipState, g: Graph) -> bool:
    src, dst = g.arcs
    return not bool(np.any(state.mask[src] & ~state.mask[dst]))


def propagate(g: Graph, seeds, params: GossipParams, rng: np.random.Generator,
              request_id: str = "r0", seen=None,
              stop_on_saturation: bool = True) -> tuple[GossipState, list[TraceRow]]:
    """Run up to ``params.ttl`` rounds; returns the final state and the per-round trace.

    With ``stop_on_saturation`` the run ends early once no informed node has
    an uninformed neighbor (or ``p == 0``), since the informed set can no
    longer grow. Disable it to keep counting duplicate transmissions over the
    full TTL horizon.
    """
    state = init_gossip(g, seeds, params, request_id, seen)
    trace = [TraceRow(0, state.size, 0)]
    while state.round < params.ttl:
        if stop_on_saturation and (params.forward_probability == 0 or _frontier_empty(state, g)):
            break
        state = gossip_step(state, g, params, rng)
        trace.append(TraceRow(state.round, state.size, state.messages_per_round[-1]))
    return state, trace


def run_gossip(g: Graph, seeds, params: GossipParams, rng: np.random.Generator,
               stop_on_saturation: bool = True) -> list[TraceRow]:
    return propagate(g, seeds, params, rng, stop_on_saturation=stop_on_saturation)[1]


def expected_new_recipients(state: GossipState, g: Graph, p: float) -> float:
    """First-order expectation of s(t+1).

    Sums each informed node's uninformed neighbors independently, so a node
    reachable from several informed neighbors is counted several times
    (overlap ignored).
    """
    src, dst = g.arcs
    frontier_arcs = int(np.count_nonzero(state.mask[src] & ~state.mask[dst]))
    return state.size + p * frontier_arcs


def analytic_coverage(n: int, mean_degree: float, p: float, t: float) -> float:
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    return n * -math.expm1(-p * mean_degree * t / n)


def expected_total_messages(k: int, p: float, mean_degree: float,
                            coverage_trace: Sequence[float], ttl: int) -> float:
    if len(coverage_trace) < ttl + 1:
        raise ValueError(f"coverage trace has {len(coverage_trace)} entries, need ttl+1 = {ttl + 1}")
    return k * sum(p * mean_degree * s for s in coverage_trace[: ttl + 1])


def trace_rows(trial: int, trace: Sequence[TraceRow]) -> list[tuple]:
    return [(trial, r.round, r.informed, r.messages) for r in trace]

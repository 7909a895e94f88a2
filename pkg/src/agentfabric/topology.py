"""Undirected network graphs for gossip and trust diffusion."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

KINDS = ("random", "ring", "small-world")


@dataclass(frozen=True)
class Graph:
    """Immutable simple undirected graph on nodes ``0..node_count-1``."""

    node_count: int
    adjacency: tuple[frozenset[int], ...]
    kind: str = "custom"

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("graph needs at least one node")
        if len(self.adjacency) != self.node_count:
            raise ValueError("adjacency length must equal node_count")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise ValueError(f"self-loop at node {i}")
            for j in nbrs:
                if not 0 <= j < self.node_count:
                    raise ValueError(f"node {i} has out-of-range neighbor {j}")
                if i not in self.adjacency[j]:
                    raise ValueError(f"asymmetric edge {i}->{j}")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], kind: str = "custom") -> "Graph":
        adj: list[set[int]] = [set() for _ in range(n)]
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            adj[i].add(j)
            adj[j].add(i)
        return cls(n, tuple(frozenset(a) for a in adj), kind)

    def edges(self) -> Iterator[tuple[int, int]]:
        """Each undirected edge once, as ``(i, j)`` with ``i < j``, sorted."""
        for i in range(self.node_count):
            for j in sorted(self.adjacency[i]):
                if i < j:
                    yield i, j

    @property
    def edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    @property
    def mean_degree(self) -> float:
        return 2 * self.edge_count / self.node_count

    @property
    def max_degree(self) -> int:
        return max(len(a) for a in self.adjacency)

    @cached_property
    def arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed arc arrays ``(src, dst)`` covering both orientations of every edge."""
        src = [i for i in range(self.node_count) for _ in self.adjacency[i]]
        dst = [j for i in range(self.node_count) for j in sorted(self.adjacency[i])]
        return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)

    def to_edge_list(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.edges())


def generate_graph(n: int, mean_degree: float, kind: str = "random", seed: int = 0,
                   rewire_probability: float = 0.1) -> Graph:
    """Build a seeded random, ring or small-world graph.

    ``random`` is Erdos-Renyi G(n, mean_degree/(n-1)). ``ring`` is the plain
    cycle (degree 2, ``mean_degree`` only validated). ``small-world`` starts
    from a ring lattice with ``mean_degree`` rounded to an even number of
    neighbors and rewires each lattice edge with ``rewire_probability``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < mean_degree < n:
        raise ValueError(f"mean_degree must lie in (0, n), got {mean_degree}")
    if kind not in KINDS:
        raise ValueError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(seed)

    if kind == "ring":
        return Graph.from_edges(n, ((i, (i + 1) % n) for i in range(n) if i != (i + 1) % n), kind)

    if kind == "random":
        p = mean_degree / (n - 1)
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(iu.size) < p
        return Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()), kind)

    half = max(1, int(round(mean_degree / 2)))
    half = min(half, (n - 1) // 2) or 1
    adj: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        for k in range(1, half + 1):
            j = (i + k) % n
            if j != i:
                adj[i].add(j)
                adj[j].add(i)
    for i in range(n):
        for k in range(1, half + 1):
            j = (i + k) % n
            if j not in adj[i] or rng.random() >= rewire_probability:
                continue
            choices = [c for c in range(n) if c != i and c not in adj[i]]
            if not choices:
                continue
            new = choices[int(rng.integers(len(choices)))]
            adj[i].discard(j)
            adj[j].discard(i)
            adj[i].add(new)
            adj[new].add(i)
    return Graph(n, tuple(frozenset(a) for a in adj), kind)


def neighbors(g: Graph, i: int) -> frozenset[int]:
    if not 0 <= i < g.node_count:
        raise KeyError(f"unknown node id {i}")
    return g.adjacency[i]


def is_connected(g: Graph) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        for j in g.adjacency[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == g.node_count


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, ((i, j) for i in range(n) for j in range(i + 1, n)), "complete")


def star_graph(leaves: int) -> Graph:
    return Graph.from_edges(leaves + 1, ((0, j) for j in range(1, leaves + 1)), "star")


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, ((i, i + 1) for i in range(n - 1)), "path")

"""Task requests and subtask DAGs."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .policy import ALLOW_ALL, Policy

SHARE_TOLERANCE = 1e-9


class DAGError(ValueError):
    pass


@dataclass(frozen=True)
class TaskRequest:
    """The request triple (description, deadline, access policy) plus budget and tags."""

    id: str
    description: str
    deadline: int
    policy: Policy = ALLOW_ALL
    budget: int = 1
    requirement_tags: frozenset[str] = frozenset()
    published_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "requirement_tags", frozenset(self.requirement_tags))
        if self.budget <= 0:
            raise ValueError(f"task {self.id}: budget must be positive")
        if self.deadline <= self.published_at:
            raise ValueError(f"task {self.id}: deadline must be after publication time")


@dataclass(frozen=True)
class Subtask:
    id: str
    tags: frozenset[str]
    share: float = 1.0
    duration: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))
        if self.duration < 1:
            raise DAGError(f"subtask {self.id}: duration estimate must be at least 1")
        if not 0.0 <= self.share <= 1.0:
            raise DAGError(f"subtask {self.id}: bounty share must be in [0, 1]")


def exact_share(share: float) -> Fraction:
    return Fraction(share).limit_denominator(10**9)


@dataclass(frozen=True)
class SubtaskDAG:
    nodes: tuple[Subtask, ...]
    edges: tuple[tuple[str, str], ...] = ()
    order: tuple[str, ...] = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if not self.nodes:
            raise DAGError("a DAG needs at least one subtask")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise DAGError("duplicate subtask ids")
        for a, b in self.edges:
            if a not in ids or b not in ids:
                raise DAGError(f"edge {a}->{b} references an unknown subtask")
        total = sum(n.share for n in self.nodes)
        if abs(total - 1.0) > SHARE_TOLERANCE:
            raise DAGError(f"bounty shares sum to {total}, expected 1")
        object.__setattr__(self, "order", _toposort(ids, self.edges))

    def __getitem__(self, subtask_id: str) -> Subtask:
        for n in self.nodes:
            if n.id == subtask_id:
                return n
        raise KeyError(subtask_id)

    def predecessors(self, subtask_id: str) -> list[str]:
        return [a for a, b in self.edges if b == subtask_id]

    def successors(self, subtask_id: str) -> list[str]:
        return [b for a, b in self.edges if a == subtask_id]

    def earliest_finish(self) -> dict[str, int]:
        finish: dict[str, int] = {}
        for sid in self.order:
            start = max((finish[p] for p in self.predecessors(sid)), default=0)
            finish[sid] = start + self[sid].duration
        return finish

    def apportion_deadlines(self, start: int, deadline: int) -> dict[str, int]:
        """Absolute per-subtask deadlines scaled along the critical path.

        Each subtask's earliest finish time is mapped proportionally onto the
        window ``[start, deadline]`` so the critical-path sinks land exactly on
        the task deadline.
        """
        finish = self.earliest_finish()
        critical = max(finish.values())
        window = deadline - start
        return {sid: start + max(1, (window * f) // critical) for sid, f in finish.items()}


def _toposort(ids: Sequence[str], edges: Iterable[tuple[str, str]]) -> tuple[str, ...]:
    indeg = {i: 0 for i in ids}
    out: dict[str, list[str]] = {i: [] for i in ids}
    for a, b in edges:
        out[a].append(b)
        indeg[b] += 1
    ready = [i for i in ids if indeg[i] == 0]
    order = []
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        for nxt in out[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(ids):
        raise DAGError("subtask graph contains a cycle")
    return tuple(order)


def single_subtask_dag(request: TaskRequest, duration: int = 1) -> SubtaskDAG:
    return SubtaskDAG((Subtask(f"{request.id}.0", request.requirement_tags, 1.0, duration),))

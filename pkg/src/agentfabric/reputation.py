"""Agent Cards and multi-axis reputation records.

Peer ratings on four axes (accuracy, latency, communication, reliability)
fold in by exponential moving average from a 0.5 prior. Task outcomes
update success counters, the reward/penalty ratio and task diversity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

AXES = ("accuracy", "latency", "communication", "reliability")
EMA_DECAY = 0.1
COLD_START_PRIOR = 0.5
SNAPSHOT_HEADER = ("agent", "accuracy", "latency", "communication", "reliability", "composite", "diversity")


class ReputationError(ValueError):
    pass


@dataclass
class ReputationRecord:
    accuracy: float = COLD_START_PRIOR
    latency: float = COLD_START_PRIOR
    communication: float = COLD_START_PRIOR
    reliability: float = COLD_START_PRIOR
    rating_count: int = 0
    successes: int = 0
    attempts: int = 0
    completed: int = 0
    claimed: int = 0
    weighted_successes: float = 0.0
    weighted_attempts: float = 0.0
    reward: int = 0
    penalty: int = 0
    tag_classes: set[frozenset[str]] = field(default_factory=set)
    applied_outcomes: set[str] = field(default_factory=set)

    @property
    def axis_scores(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.latency, self.communication, self.reliability)

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def weighted_success_rate(self) -> float:
        """Success rate with each outcome weighted by its task complexity multiplier."""
        return self.weighted_successes / self.weighted_attempts if self.weighted_attempts else 0.0

    @property
    def reward_penalty_ratio(self) -> float:
        return self.reward / max(self.penalty, 1)

    @property
    def task_diversity(self) -> int:
        return len(self.tag_classes)

    @property
    def history_tags(self) -> frozenset[str]:
        return frozenset().union(*self.tag_classes) if self.tag_classes else frozenset()


@dataclass
class AgentCard:
    id: int
    tags: frozenset[str]
    attributes: frozenset[str] = frozenset()
    endpoint: str = ""
    reputation: ReputationRecord = field(default_factory=ReputationRecord)
    latency_indicator: float = 0.0
    function_signatures: tuple[str, ...] = ()

    def __post_init__(self):
        self.tags = frozenset(self.tags)
        self.attributes = frozenset(self.attributes)
        if not self.endpoint:
            self.endpoint = f"sim://agent/{self.id}"


@dataclass(frozen=True)
class TaskOutcome:
    outcome_id: str
    agent_id: int
    task_tags: frozenset[str]
    success: bool
    completed: bool = False
    started: bool = True
    reward: int = 0
    penalty: int = 0
    latency: float | None = None
    complexity: float = 1.0


class ReputationStore:
    """Cards by agent id plus the participant sets that authorise peer ratings."""

    def __init__(self, cards: Iterable[AgentCard] = ()):
        self.cards: dict[int, AgentCard] = {}
        self.participants: dict[str, set[int]] = {}
        for c in cards:
            self.add(c)

    def add(self, card: AgentCard) -> None:
        if card.id in self.cards:
            raise ReputationError(f"duplicate agent id {card.id}")
        self.cards[card.id] = card

    def __getitem__(self, agent_id: int) -> AgentCard:
        return self.cards[agent_id]

    def __contains__(self, agent_id) -> bool:
        return agent_id in self.cards

    def register_participants(self, task_id: str, agents: Iterable[int]) -> None:
        self.participants.setdefault(task_id, set()).update(agents)

    def snapshot_rows(self) -> list[tuple]:
        rows = []
        for aid in sorted(self.cards):
            r = self.cards[aid].reputation
            rows.append((aid, *r.axis_scores, composite_reputation(r), r.task_diversity))
        return rows


def _ema(old: float, new: float, decay: float = EMA_DECAY) -> float:
    return (1.0 - decay) * old + decay * new


def record_rating(store: ReputationStore, rater: int, ratee: int, axes: Sequence[float],
                  task_id: str) -> ReputationRecord:
    if rater == ratee:
        raise ReputationError("agents cannot rate themselves")
    members = store.participants.get(task_id, set())
    if rater not in members or ratee not in members:
        raise ReputationError(f"agents {rater} and {ratee} did not both take part in task {task_id}")
    if len(axes) != len(AXES) or not all(0.0 <= a <= 1.0 for a in axes):
        raise ReputationError(f"ratings need four values in [0, 1], got {axes!r}")
    rec = store[ratee].reputation
    for name, value in zip(AXES, axes):
        setattr(rec, name, _ema(getattr(rec, name), float(value)))
    rec.rating_count += 1
    return rec


def update_card(card: AgentCard, outcome: TaskOutcome) -> AgentCard:
    if outcome.agent_id != card.id:
        raise ReputationError(f"outcome {outcome.outcome_id} belongs to agent {outcome.agent_id}, not {card.id}")
    rec = card.reputation
    if outcome.outcome_id in rec.applied_outcomes:
        raise ReputationError(f"outcome {outcome.outcome_id} already applied")
    rec.applied_outcomes.add(outcome.outcome_id)
    rec.claimed += 1
    rec.completed += int(outcome.completed or outcome.success)
    if outcome.started:
        rec.attempts += 1
        rec.weighted_attempts += outcome.complexity
    if outcome.success:
        rec.successes += 1
        rec.weighted_successes += outcome.complexity
        rec.tag_classes.add(frozenset(outcome.task_tags))
    rec.reward += outcome.reward
    rec.penalty += outcome.penalty
    if outcome.latency is not None:
        card.latency_indicator = (outcome.latency if card.latency_indicator <= 0
                                  else _ema(card.latency_indicator, outcome.latency))
    return card


def composite_reputation(record: ReputationRecord) -> float:
    if record.rating_count == 0:
        return COLD_START_PRIOR
    return sum(record.axis_scores) / len(AXES)


def rate_limit_check(record: ReputationRecord, threshold: float = 0.3, active_tasks: int = 0,
                     cap: int = 1) -> bool:
    if composite_reputation(record) < threshold:
        return active_tasks < cap
    return True

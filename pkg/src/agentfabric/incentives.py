"""Performance metrics, staking, bid evaluation and orchestrator payouts."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Callable, Hashable, Mapping, Sequence

from .ledger import Ledger

log = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AgentStats:
    successes: int = 0
    attempts: int = 0
    completed: int = 0
    claimed: int = 0
    median_peer_time: float | None = None
    own_time: float | None = None

    def __post_init__(self):
        if self.successes > self.attempts:
            raise ValueError("successes cannot exceed attempts")
        if self.completed > self.claimed:
            raise ValueError("completed cannot exceed claimed")

    @property
    def cold_start(self) -> bool:
        return self.attempts == 0

    @property
    def no_claims(self) -> bool:
        return self.claimed == 0


@dataclass(frozen=True)
class IncentiveWeights:
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"incentive weight {name} outside [0, 1]")
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"composite score weights must satisfy alpha + beta + gamma = 1 (got {total})")


@dataclass(frozen=True)
class StakeParams:
    base_stake: float = 10
    complexity_multiplier: float = 1.0

    def __post_init__(self):
        if self.base_stake <= 0:
            raise ValueError("base stake must be positive")
        if self.complexity_multiplier < 1:
            raise ValueError("complexity multiplier must be at least 1")


@dataclass(frozen=True)
class OrchestratorStats:
    match_efficiency: float
    coordination_reliability: float
    weight_delta: float = 0.5
    weight_epsilon: float = 0.5

    def __post_init__(self):
        if abs(self.weight_delta + self.weight_epsilon - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError("orchestrator weights must satisfy delta + epsilon = 1")
        for name in ("match_efficiency", "coordination_reliability", "weight_delta", "weight_epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")


@dataclass(frozen=True)
class BidWeights:
    quality: float = 0.5
    time: float = 0.3
    price: float = 0.2


@dataclass(frozen=True)
class Bid:
    agent_id: int
    price: int
    projected_quality: float
    projected_completion: float

    def __post_init__(self):
        if self.projected_completion <= 0:
            raise ValueError("projected completion must be positive")
        if not 0.0 <= self.projected_quality <= 1.0:
            raise ValueError("projected quality must be in [0, 1]")
        if self.price < 0:
            raise ValueError("bid price must be non-negative")


def round_half_up(x: float) -> int:
    return int(Decimal(repr(float(x))).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def success_rate(stats: AgentStats) -> float:
    if stats.cold_start:
        log.debug("success rate requested for an agent with no attempts")
        return 0.0
    return stats.successes / stats.attempts


def speed_score(t_m: float, t_i: float) -> float:
    if t_m <= 0 or t_i <= 0:
        raise ValueError("completion times must be positive")
    return min(1.0, t_m / t_i)


def completion_rate(stats: AgentStats) -> float:
    if stats.no_claims:
        log.debug("completion rate requested for an agent with no claimed tasks")
        return 0.0
    return stats.completed / stats.claimed


def composite_score(sr: float, ss: float, cr: float, w: IncentiveWeights = IncentiveWeights()) -> float:
    r = w.alpha * sr + w.beta * ss + w.gamma * cr
    return min(1.0, max(0.0, r))


def stake_amount(params: StakeParams, r: float) -> float:
    """Unrounded stake ``S0 * tau * (1 - R)``."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"performance score must be in [0, 1], got {r}")
    return params.base_stake * params.complexity_multiplier * (1.0 - r)


def required_stake(params: StakeParams, r: float) -> int:
    return round_half_up(stake_amount(params, r))


def orchestrator_score(stats: OrchestratorStats) -> float:
    return stats.weight_delta * stats.match_efficiency + stats.weight_epsilon * stats.coordination_reliability


def largest_remainder(total: int, weights: Sequence[Fraction | float]) -> list[int]:
    """Integer split of ``total`` proportional to ``weights`` summing to exactly ``total``.

    Remainder units go to the largest fractional parts; ties favor earlier entries.
    """
    fr = [Fraction(w) for w in weights]
    denom = sum(fr)
    if denom <= 0:
        raise ValueError("weights must have a positive sum")
    exact = [total * w / denom for w in fr]
    base = [math.floor(x) for x in exact]
    left = total - sum(base)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def distribute_orchestrator_pool(scores: Sequence[tuple[Hashable, float]], pool: int,
                                 ledger: Ledger | None = None, payer: Hashable | None = None
                                 ) -> dict[Hashable, int]:
    """Split ``pool`` in proportion to orchestrator scores.

    With a ledger the payments are transferred from ``payer``. All-zero
    scores leave the pool untouched and return an empty mapping.
    """
    if pool < 0:
        raise ValueError("pool must be non-negative")
    if not scores or all(s <= 0 for _, s in scores):
        log.warning("orchestrator pool retained: no positive scores")
        return {}
    amounts = largest_remainder(pool, [max(s, 0.0) for _, s in scores])
    payments = {oid: amt for (oid, _), amt in zip(scores, amounts)}
    if ledger is not None:
        for oid, amt in payments.items():
            if amt:
                ledger.create_account(oid, exist_ok=True)
                ledger.transfer(payer, oid, amt)
    return payments


def bid_score(bid: Bid, deadline: float, bounty: float, weights: BidWeights = BidWeights()) -> float:
    timeliness = max(0.0, 1.0 - bid.projected_completion / deadline)
    return weights.quality * bid.projected_quality + weights.time * timeliness - weights.price * (bid.price / bounty)


def evaluate_bids(bids: Sequence[Bid], deadline: float, bounty: float,
                  weights: BidWeights = BidWeights(),
                  reputation: Callable[[int], float] | Mapping[int, float] | None = None) -> list[Bid]:
    """Bids best-first; the head is the winner, the rest are runner-ups in order."""
    if not bids:
        raise ValueError("no bids to evaluate")
    if reputation is None:
        rep = lambda aid: 0.5
    elif callable(reputation):
        rep = reputation
    else:
        rep = lambda aid: reputation.get(aid, 0.5)
    return sorted(bids, key=lambda b: (-bid_score(b, deadline, bounty, weights), -rep(b.agent_id), b.agent_id))


def median_completion_time(times: Sequence[float]) -> float | None:
    """Peer reference time for the speed score: median of completion times in a tag class."""
    if not times:
        return None
    s = sorted(times)
    mid = len(s) // 2
    return float(s[mid]) if len(s) % 2 else (s[mid - 1] + s[mid]) / 2.0

"""Six-stage task lifecycle: publish, discover, recruit, execute, settle, feedback.

A :class:`TaskRecord` is an explicit state machine. The :class:`Coordinator`
owns the shared ledger, reputation store and custody store and drives each
record through its stages; every transition is checked against
``TRANSITIONS`` and appended to the record's history.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .incentives import Bid, BidWeights, evaluate_bids, largest_remainder
from .ledger import InsufficientFunds, Ledger
from .matching import NoMatch, Ranked
from .policy import satisfies
from .reputation import (AgentCard, ReputationStore, TaskOutcome, composite_reputation,
                         record_rating, update_card)
from .tasks import DAGError, SubtaskDAG, TaskRequest, exact_share

log = logging.getLogger(__name__)

EVENT_HEADER = ("time", "task", "subtask", "event", "agent", "detail")
REVIEW_TOLERANCE = 0.2


class State(str, enum.Enum):
    PUBLISHED = "Published"
    DISCOVERING = "Discovering"
    RECRUITING = "Recruiting"
    EXECUTING = "Executing"
    VERIFYING = "Verifying"
    DISPUTED = "Disputed"
    SETTLED = "Settled"
    FAILED = "Failed"


TERMINAL = frozenset({State.SETTLED, State.FAILED})
TRANSITIONS: dict[State, frozenset[State]] = {
    State.PUBLISHED: frozenset({State.DISCOVERING}),
    State.DISCOVERING: frozenset({State.RECRUITING, State.FAILED}),
    State.RECRUITING: frozenset({State.EXECUTING, State.FAILED}),
    State.EXECUTING: frozenset({State.VERIFYING, State.DISPUTED}),
    State.VERIFYING: frozenset({State.SETTLED}),
    State.DISPUTED: frozenset({State.SETTLED, State.FAILED}),
    State.SETTLED: frozenset(),
    State.FAILED: frozenset(),
}


class LifecycleError(RuntimeError):
    pass


class IllegalTransition(LifecycleError):
    pass


class Event(NamedTuple):
    time: int
    task: str
    subtask: str
    event: str
    agent: object
    detail: str


class Interrupt(NamedTuple):
    subtask: str
    cause: str  # "timeout" or "fault"
    agent: int


@dataclass(frozen=True)
class WorkerBehavior:
    """Scenario model of how an agent executes an assignment.

    Duration is ``latency + U{0..jitter}`` steps. With probability
    ``success_probability`` the work completes at ``quality``; otherwise it
    either raises a fault at the end (``crash``) or never finishes (``hang``).
    """

    success_probability: float = 1.0
    latency: int = 1
    jitter: int = 0
    quality: float = 1.0
    fault_mode: str = "crash"

    def __post_init__(self):
        if not 0.0 <= self.success_probability <= 1.0:
            raise ValueError("success_probability must be in [0, 1]")
        if self.latency < 1 or self.jitter < 0:
            raise ValueError("latency must be >= 1 and jitter >= 0")
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError("quality must be in [0, 1]")
        if self.fault_mode not in ("crash", "hang"):
            raise ValueError(f"unknown fault mode {self.fault_mode!r}")


@dataclass
class Assignment:
    subtask: str
    agent: int
    bid: Bid
    attempt: int
    assigned_at: int
    proxy: int | None = None
    stake: int = 0
    stake_escrow: str | None = None
    status: str = "assigned"  # assigned, running, completed, faulted, timeout
    started_at: int | None = None
    finished_at: int | None = None
    duration: int = 0
    progress: int = 0
    will_succeed: bool = True
    fault_mode: str = "crash"
    delivered_quality: float | None = None
    checkpoints: int = 0
    slashed: int = 0

    @property
    def active(self) -> bool:
        return self.status in ("assigned", "running", "faulted")


@dataclass
class SubtaskState:
    spec: object
    deadline: int
    active: Assignment | None = None
    fallback_pool: list[Bid] = field(default_factory=list)
    history: list[Assignment] = field(default_factory=list)
    excluded: set[int] = field(default_factory=set)
    status: str = "unassigned"  # unassigned, assigned, running, completed, exhausted

    @property
    def id(self) -> str:
        return self.spec.id


@dataclass
class SettlementReport:
    task_id: str
    payouts: dict[int, int]
    fees: dict[int, int]
    refund: int
    fractions: dict[str, float]
    slashed: int
    stake_refunds: dict[int, int]
    final_state: State


@dataclass
class TaskRecord:
    request: TaskRequest
    manager: int
    escrow_id: str
    complexity: float = 1.0
    state: State = State.PUBLISHED
    dag: SubtaskDAG | None = None
    subtasks: dict[str, SubtaskState] = field(default_factory=dict)
    checkpoints: list[Event] = field(default_factory=list)
    transitions: list[tuple[int, State, State]] = field(default_factory=list)
    dispute: bool = False
    verdicts: dict[str, float] | None = None
    report: SettlementReport | None = None
    feedback_applied: bool = False
    published_at: int = 0
    terminal_at: int | None = None
    no_match_retries: int = 0

    @property
    def id(self) -> str:
        return self.request.id

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL

    def transition(self, new: State, now: int) -> None:
        if new not in TRANSITIONS[self.state]:
            raise IllegalTransition(f"task {self.id}: {self.state.value} -> {new.value} is not allowed")
        self.transitions.append((now, self.state, new))
        self.state = new
        if new in TERMINAL:
            self.terminal_at = now

    def allocation(self, subtask_id: str) -> Fraction:
        return self.request.budget * exact_share(self.subtasks[subtask_id].spec.share)


# -- custody ---------------------------------------------------------------------

class TaskRef(NamedTuple):
    task: str
    subtask: str


@dataclass
class CustodyQueue:
    custodian: int
    entries: list[TaskRef] = field(default_factory=list)
    compensation_accrued: int = 0


class CustodyStore:
    def __init__(self):
        self.queues: dict[int, CustodyQueue] = {}
        self.compensation: dict[int, int] = {}

    def custodian_of(self, agent: int) -> int | None:
        q = self.queues.get(agent)
        return q.custodian if q else None


def custody_register(agent: int, custodian: int, store: CustodyStore) -> CustodyQueue:
    if agent in store.queues:
        raise LifecycleError(f"agent {agent} already has custodian {store.queues[agent].custodian}")
    if agent == custodian:
        raise LifecycleError("an agent cannot be its own custodian")
    if custodian in store.queues:
        raise LifecycleError(f"custodian {custodian} is itself offline under custody; subcontracting is not allowed")
    q = CustodyQueue(custodian)
    store.queues[agent] = q
    return q


def custody_reclaim(agent: int, store: CustodyStore,
                    in_flight: Callable[[TaskRef], bool] = lambda ref: False) -> list[TaskRef]:
    """Hand pending custodied tasks back to ``agent``; in-flight ones stay with the custodian."""
    if agent not in store.queues:
        raise LifecycleError(f"agent {agent} has no custody entry")
    q = store.queues.pop(agent)
    return [ref for ref in q.entries if not in_flight(ref)]


# -- autoscaling -------------------------------------------------------------------

class ScaleDecision(NamedTuple):
    agent_id: int
    cause: str


def autoscale_check(metrics: Mapping[int, tuple[float, int]], cpu_threshold: float,
                    pending_threshold: int) -> list[ScaleDecision]:
    decisions = []
    for aid in sorted(metrics):
        cpu, pending = metrics[aid]
        causes = []
        if cpu > cpu_threshold:
            causes.append("cpu")
        if pending > pending_threshold:
            causes.append("pending")
        if causes:
            decisions.append(ScaleDecision(aid, "+".join(causes)))
    return decisions


# -- arbitration -------------------------------------------------------------------

def default_arbiter(projected: float, delivered: float | None, tolerance: float = REVIEW_TOLERANCE) -> float:
    """Full payout at or above the projected quality, zero beyond ``tolerance`` below, linear between."""
    if delivered is None:
        return 0.0
    if delivered >= projected:
        return 1.0
    shortfall = projected - delivered
    if shortfall > tolerance:
        return 0.0
    return 1.0 - shortfall / tolerance


def _exec_rng_draws(rng: np.random.Generator, behavior: WorkerBehavior) -> tuple[int, bool]:
    duration = behavior.latency + (int(rng.integers(0, behavior.jitter + 1)) if behavior.jitter else 0)
    return duration, bool(rng.random() < behavior.success_probability)


BidCollector = Callable[[int, TaskRecord, str], "Bid | None"]


class Coordinator:
    """Shared context for driving task records through their lifecycle."""

    def __init__(self, ledger: Ledger, reputation: ReputationStore,
                 custody: CustodyStore | None = None, *,
                 stake_for: Callable[[int, TaskRecord], int] = lambda aid, rec: 0,
                 bid_weights: BidWeights = BidWeights(), fallback_size: int = 2,
                 custody_fee_rate: float = 0.01, timeout_grace: int = 0,
                 arbiter: Callable[[float, float | None], float] = default_arbiter,
                 rate_limit: Callable[[int], bool] = lambda aid: True):
        self.ledger = ledger
        self.reputation = reputation
        self.custody = custody or CustodyStore()
        self.stake_for = stake_for
        self.bid_weights = bid_weights
        self.fallback_size = fallback_size
        self.custody_fee_rate = Fraction(custody_fee_rate).limit_denominator(10**6)
        self.timeout_grace = timeout_grace
        self.arbiter = arbiter
        self.rate_limit = rate_limit
        self.records: dict[str, TaskRecord] = {}
        self.events: list[Event] = []

    def emit(self, record: TaskRecord, now: int, subtask: str, event: str, agent="", detail=""):
        ev = Event(now, record.id, subtask, event, agent, detail)
        record.checkpoints.append(ev)
        self.events.append(ev)

    def _move(self, record: TaskRecord, new: State, now: int):
        old = record.state
        record.transition(new, now)
        self.emit(record, now, "", "state", record.manager, f"{old.value}->{new.value}")

    # -- publish / decompose ---------------------------------------------------

    def publish(self, request: TaskRequest, manager: int, now: int = 0, complexity: float = 1.0) -> TaskRecord:
        if request.id in self.records:
            raise LifecycleError(f"task {request.id} already published")
        eid = self.ledger.escrow_lock(manager, request.budget)  # raises InsufficientFunds
        record = TaskRecord(request, manager, eid, complexity=complexity, published_at=now)
        self.records[request.id] = record
        self.emit(record, now, "", "publish", manager, f"budget={request.budget} escrow={eid}")
        return record

    def decompose(self, record: TaskRecord, decomposer: Callable[[TaskRecord], SubtaskDAG], now: int = 0) -> SubtaskDAG:
        if record.state is not State.PUBLISHED:
            raise LifecycleError(f"task {record.id} is {record.state.value}, expected Published")
        dag = decomposer(record)
        if not isinstance(dag, SubtaskDAG):
            raise DAGError("decomposer must return a SubtaskDAG")
        record.dag = dag
        deadlines = dag.apportion_deadlines(now, record.request.deadline)
        record.subtasks = {sid: SubtaskState(dag[sid], deadlines[sid]) for sid in dag.order}
        self._move(record, State.DISCOVERING, now)
        return dag

    # -- recruit -----------------------------------------------------------------

    def eligible(self, record: TaskRecord, agent_id: int, subtask_id: str) -> bool:
        if agent_id == record.manager or agent_id in record.subtasks[subtask_id].excluded:
            return False
        card = self.reputation.cards.get(agent_id)
        if card is None or not satisfies(card.attributes, record.request.policy):
            return False
        return self.rate_limit(agent_id)

    def _lock_stake(self, record: TaskRecord, agent_id: int) -> tuple[int, str | None]:
        stake = int(self.stake_for(agent_id, record))
        if stake <= 0:
            return 0, None
        return stake, self.ledger.escrow_lock(agent_id, stake)

    def _assign(self, record: TaskRecord, st: SubtaskState, bid: Bid, now: int) -> Assignment | None:
        try:
            stake, eid = self._lock_stake(record, bid.agent_id)
        except InsufficientFunds:
            self.emit(record, now, st.id, "stake_short", bid.agent_id, "")
            return None
        a = Assignment(st.id, bid.agent_id, bid, attempt=len(st.history), assigned_at=now,
                       stake=stake, stake_escrow=eid)
        custodian = self.custody.custodian_of(bid.agent_id)
        if custodian is not None:
            a.proxy = custodian
            self.custody.queues[bid.agent_id].entries.append(TaskRef(record.id, st.id))
        st.active = a
        st.history.append(a)
        st.status = "assigned"
        self.emit(record, now, st.id, "assign", bid.agent_id,
                  f"stake={stake}" + (f" proxy={custodian}" if custodian is not None else ""))
        return a

    def recruit(self, record: TaskRecord, subtask_id: str, ranked: Sequence[Ranked],
                bid_collector: BidCollector, now: int = 0) -> Assignment:
        """Run one bidding round among ``ranked`` agents for a subtask.

        The best affordable bid wins; the next ``fallback_size`` bids become
        the ordered fallback pool. Raises :class:`NoMatch` when nobody bids.
        """
        if record.state not in (State.DISCOVERING, State.RECRUITING):
            raise LifecycleError(f"task {record.id} is {record.state.value}; cannot recruit")
        st = record.subtasks[subtask_id]
        bounty = record.allocation(subtask_id)
        bids = []
        for r in ranked:
            if not self.eligible(record, r.agent_id, subtask_id):
                continue
            bid = bid_collector(r.agent_id, record, subtask_id)
            if bid is None or bid.price > bounty:
                continue
            bids.append(bid)
        if not bids:
            raise NoMatch("bids", {"ranked": len(ranked), "bids": 0})
        window = max(1, st.deadline - now)
        ordered = evaluate_bids(bids, window, float(bounty), self.bid_weights,
                                lambda aid: composite_reputation(self.reputation[aid].reputation))
        for i, bid in enumerate(ordered):
            self.emit(record, now, subtask_id, "bid", bid.agent_id,
                      f"rank={i} price={bid.price} q={bid.projected_quality:.4f} t={bid.projected_completion}")
        winner = None
        rest = list(ordered)
        while rest and winner is None:
            winner = self._assign(record, st, rest.pop(0), now)
        if winner is None:
            raise NoMatch("stake", {"ranked": len(ranked), "bids": len(bids)})
        st.fallback_pool = rest[: self.fallback_size]
        if record.state is State.DISCOVERING:
            self._move(record, State.RECRUITING, now)
        if all(s.active is not None for s in record.subtasks.values()):
            self._move(record, State.EXECUTING, now)
        return winner

    def fail_unmatched(self, record: TaskRecord, subtask_id: str, now: int) -> None:
        """No agent could be recruited: release held stakes, fail the record and refund."""
        st = record.subtasks[subtask_id]
        st.status = "exhausted"
        self.emit(record, now, subtask_id, "no_match", "", "")
        for s in record.subtasks.values():
            a = s.active
            if a is not None and a.stake_escrow:
                self.ledger.escrow_refund(a.stake_escrow)
                a.stake_escrow = None
            if a is not None:
                self._release_custody(record, a)
        self._move(record, State.FAILED, now)
        self.settle(record, {sid: 0.0 for sid in record.subtasks}, now)

    def reclaim(self, agent: int, now: int = 0) -> list[TaskRef]:
        """Returning agent takes back its not-yet-started custodied subtasks."""
        def in_flight(ref: TaskRef) -> bool:
            a = self.records[ref.task].subtasks[ref.subtask].active
            return a is not None and a.agent == agent and a.status != "assigned"

        refs = custody_reclaim(agent, self.custody, in_flight)
        for ref in refs:
            record = self.records[ref.task]
            a = record.subtasks[ref.subtask].active
            if a is not None and a.agent == agent:
                a.proxy = None
                self.emit(record, now, ref.subtask, "reclaim", agent, "")
        return refs

    # -- execute / monitor ---------------------------------------------------------

    def execute_step(self, record: TaskRecord, behavior: Callable[[int], WorkerBehavior],
                     rng: np.random.Generator, now: int) -> list[Event]:
        if record.state is not State.EXECUTING:
            raise LifecycleError(f"task {record.id} is {record.state.value}; cannot execute")
        before = len(record.checkpoints)
        done = {sid for sid, s in record.subtasks.items() if s.status == "completed"}
        for sid in record.dag.order:
            st = record.subtasks[sid]
            a = st.active
            if a is None or st.status == "completed":
                continue
            if a.status == "assigned":
                if not all(p in done for p in record.dag.predecessors(sid)):
                    continue
                b = behavior(a.agent)
                a.duration, a.will_succeed = _exec_rng_draws(rng, b)
                a.fault_mode = b.fault_mode
                a.status, a.started_at = "running", now
                st.status = "running"
                self.emit(record, now, sid, "start", a.agent, f"attempt={a.attempt}")
            if a.status != "running":
                continue
            a.progress += 1
            a.checkpoints += 1
            if a.progress < a.duration:
                self.emit(record, now, sid, "checkpoint", a.agent, f"{a.progress}/{a.duration}")
                continue
            if a.will_succeed:
                a.status, a.finished_at = "completed", now
                a.delivered_quality = behavior(a.agent).quality
                st.status = "completed"
                self.emit(record, now, sid, "complete", a.agent, f"quality={a.delivered_quality:.4f}")
            elif a.fault_mode == "crash":
                a.status, a.finished_at = "faulted", now
                self.emit(record, now, sid, "fault", a.agent, "crash")
        return record.checkpoints[before:]

    def monitor_check(self, record: TaskRecord, now: int, grace: int | None = None) -> list[Interrupt]:
        if record.state is not State.EXECUTING:
            return []
        grace = self.timeout_grace if grace is None else grace
        out = []
        for sid in record.dag.order:
            st = record.subtasks[sid]
            a = st.active
            if a is None or st.status == "completed":
                continue
            if a.status == "faulted":
                out.append(Interrupt(sid, "fault", a.agent))
            elif now > st.deadline + grace:
                out.append(Interrupt(sid, "timeout", a.agent))
        return out

    def _release_custody(self, record: TaskRecord, a: Assignment) -> None:
        q = self.custody.queues.get(a.agent)
        if q is not None:
            ref = TaskRef(record.id, a.subtask)
            if ref in q.entries:
                q.entries.remove(ref)

    def _slash(self, record: TaskRecord, a: Assignment) -> int:
        if not a.stake_escrow:
            return 0
        self.ledger.escrow_release(a.stake_escrow, {record.manager: a.stake})
        a.stake_escrow = None
        a.slashed = a.stake
        return a.stake

    def promote_fallback(self, record: TaskRecord, subtask_id: str, interrupt: Interrupt, now: int
                         ) -> Assignment | None:
        """Replace a failed assignee by the head of the fallback pool.

        The failed agent's stake goes to the publisher and it is excluded
        from this subtask. An exhausted pool moves the record to Disputed.
        """
        st = record.subtasks[subtask_id]
        a = st.active
        if a is None:
            raise LifecycleError(f"subtask {subtask_id} has no active assignment")
        a.status = "timeout" if interrupt.cause == "timeout" else "faulted"
        a.finished_at = a.finished_at if a.finished_at is not None else now
        slashed = self._slash(record, a)
        self._release_custody(record, a)
        self.emit(record, now, subtask_id, "interrupt", a.agent, f"cause={interrupt.cause} slashed={slashed}")
        st.excluded.add(a.agent)
        st.active = None
        while st.fallback_pool:
            bid = st.fallback_pool.pop(0)
            if bid.agent_id in st.excluded or not self.eligible(record, bid.agent_id, subtask_id):
                continue
            new = self._assign(record, st, bid, now)
            if new is not None:
                self.emit(record, now, subtask_id, "failover", bid.agent_id, f"replaces={a.agent}")
                return new
        st.status = "exhausted"
        self.emit(record, now, subtask_id, "exhausted", "", "")
        if record.state is State.EXECUTING:
            self._move(record, State.DISPUTED, now)
        return None

    def handle_interrupts(self, record: TaskRecord, now: int) -> None:
        """Promote fallbacks until the monitor is quiet or the record leaves Executing."""
        while record.state is State.EXECUTING:
            interrupts = self.monitor_check(record, now)
            if not interrupts:
                return
            for it in interrupts:
                if record.state is not State.EXECUTING:
                    return
                self.promote_fallback(record, it.subtask, it, now)

    def verify(self, record: TaskRecord, now: int) -> bool:
        """Move to Verifying once every subtask delivered; flag quality shortfalls."""
        if record.state is not State.EXECUTING:
            return False
        if any(s.status != "completed" for s in record.subtasks.values()):
            return False
        self._move(record, State.VERIFYING, now)
        record.dispute = any(s.active.delivered_quality < s.active.bid.projected_quality
                             for s in record.subtasks.values())
        if record.dispute:
            self.emit(record, now, "", "dispute", record.manager, "quality below projection")
        return True

    # -- review / settle / feedback ------------------------------------------------------

    def review(self, record: TaskRecord, arbiter: Callable[[float, float | None], float] | None = None,
               now: int = 0) -> dict[str, float]:
        if not (record.state is State.DISPUTED or (record.state is State.VERIFYING and record.dispute)):
            raise LifecycleError(f"task {record.id} is not under dispute")
        arbiter = arbiter or self.arbiter
        verdicts = {}
        try:
            for sid, st in record.subtasks.items():
                a = st.active
                if st.status != "completed" or a is None:
                    verdicts[sid] = 0.0
                    continue
                frac = float(arbiter(a.bid.projected_quality, a.delivered_quality))
                if not 0.0 <= frac <= 1.0:
                    raise ValueError(f"arbiter returned {frac}")
                verdicts[sid] = frac
        except Exception as exc:
            log.warning("reviewer failed on %s (%s); refunding everything", record.id, exc)
            self.emit(record, now, "", "review_failed", record.manager, str(exc))
            verdicts = {sid: 0.0 for sid in record.subtasks}
        for sid, frac in verdicts.items():
            self.emit(record, now, sid, "verdict", "", f"{frac:.6f}")
        record.verdicts = verdicts
        return verdicts

    def settle(self, record: TaskRecord, verdicts: Mapping[str, float] | None = None,
               now: int = 0) -> SettlementReport:
        """Release escrow per bounty share times payout fraction; idempotent."""
        if record.report is not None:
            return record.report
        if record.state not in (State.VERIFYING, State.DISPUTED, State.FAILED):
            raise LifecycleError(f"task {record.id} is {record.state.value}; nothing to settle")
        if verdicts is None:
            verdicts = record.verdicts or {sid: 1.0 for sid in record.subtasks}
        record.verdicts = dict(verdicts)

        budget = record.request.budget
        labels, targets = [], []
        for sid, st in record.subtasks.items():
            alloc = record.allocation(sid)
            a = st.active if st.status == "completed" else None
            fee = Fraction(0)
            if a is not None and a.proxy is not None:
                fee = alloc * self.custody_fee_rate
                labels.append(("fee", a.proxy))
                targets.append(fee)
            frac = Fraction(verdicts.get(sid, 0.0)).limit_denominator(10**9)
            if a is not None:
                labels.append(("pay", a.agent))
                targets.append((alloc - fee) * frac)
        labels.append(("refund", record.manager))
        targets.append(budget - sum(targets, Fraction(0)))
        amounts = (largest_remainder(budget, targets) if budget > 0 else [0] * len(targets))

        payouts: dict[int, int] = {}
        fees: dict[int, int] = {}
        for (kind, who), amt in zip(labels, amounts):
            if kind == "pay":
                payouts[who] = payouts.get(who, 0) + amt
            elif kind == "fee":
                fees[who] = fees.get(who, 0) + amt
        combined: dict[int, int] = {}
        for d in (payouts, fees):
            for who, amt in d.items():
                if amt:
                    self.ledger.create_account(who, exist_ok=True)
                    combined[who] = combined.get(who, 0) + amt
        refund = self.ledger.escrow_release(record.escrow_id, combined)
        for who, amt in fees.items():
            self.custody.compensation[who] = self.custody.compensation.get(who, 0) + amt
            for q in self.custody.queues.values():
                if q.custodian == who:
                    q.compensation_accrued += amt
                    break

        slashed, stake_refunds = 0, {}
        for sid, st in record.subtasks.items():
            for a in st.history:
                slashed += a.slashed
            a = st.active
            if a is None or not a.stake_escrow:
                continue
            if st.status == "completed" and verdicts.get(sid, 0.0) == 0:
                slashed += self._slash(record, a)
            else:
                # delivered with some payout, or aborted through no fault of its own
                self.ledger.escrow_refund(a.stake_escrow)
                stake_refunds[a.agent] = stake_refunds.get(a.agent, 0) + a.stake
            a.stake_escrow = None
            self._release_custody(record, a)

        if record.state is State.VERIFYING:
            self._move(record, State.SETTLED, now)
        elif record.state is State.DISPUTED:
            self._move(record, State.FAILED if all(v == 0 for v in verdicts.values()) else State.SETTLED, now)
        report = SettlementReport(record.id, payouts, fees, refund, dict(verdicts), slashed,
                                  stake_refunds, record.state)
        record.report = report
        self.emit(record, now, "", "settle", record.manager,
                  f"paid={sum(payouts.values())} fees={sum(fees.values())} refund={refund}")
        return report

    def feedback(self, record: TaskRecord, now: int = 0) -> list[TaskOutcome]:
        """Fold every assignment's outcome into reputation, once per record."""
        if record.state not in TERMINAL:
            raise LifecycleError(f"task {record.id} is {record.state.value}; feedback needs a terminal state")
        if record.feedback_applied:
            return []
        record.feedback_applied = True
        store = self.reputation
        members = {record.manager} | {a.agent for st in record.subtasks.values() for a in st.history}
        store.register_participants(record.id, members)
        verdicts = record.verdicts or {}
        payouts = record.report.payouts if record.report else {}
        outcomes = []
        for sid, st in record.subtasks.items():
            for a in st.history:
                if a.status in ("assigned", "running"):
                    continue  # aborted when the record left Executing
                started = a.started_at is not None and a.started_at <= st.deadline
                if not started and a.status == "timeout":
                    continue  # never had a chance to work before the deadline
                completed = a.status == "completed"
                frac = verdicts.get(sid, 0.0) if a is st.active else 0.0
                success = completed and frac > 0
                latency = (a.finished_at - a.started_at + 1) if (completed and a.started_at is not None) else None
                reward = payouts.get(a.agent, 0) if success else 0
                outcome = TaskOutcome(f"{record.id}/{sid}/{a.attempt}", a.agent, st.spec.tags, success,
                                      completed=completed, started=started, reward=reward,
                                      penalty=a.slashed, latency=latency, complexity=record.complexity)
                update_card(store[a.agent], outcome)
                outcomes.append(outcome)
                speed = min(1.0, st.spec.duration / latency) if latency else 0.0
                axes = (a.delivered_quality if completed else 0.0, speed,
                        1.0 if a.checkpoints else 0.0, 1.0 if completed else 0.0)
                record_rating(store, record.manager, a.agent, axes, record.id)
                self.emit(record, now, sid, "feedback", a.agent,
                          f"success={int(success)} axes={','.join(f'{x:.3f}' for x in axes)}")
        return outcomes

    def escrow_accounting(self, record: TaskRecord) -> tuple[int, int, int, int, int]:
        """``(spend, held, payouts, refunds, fees)`` for the record's budget escrow."""
        esc = self.ledger.escrows[record.escrow_id]
        held = 0 if esc.released else esc.amount
        paid = refunds = fees = 0
        for e in self.ledger.journal:
            if e.escrow != record.escrow_id:
                continue
            if e.op == "refund":
                refunds += e.amount
            elif e.op == "release":
                paid += e.amount
        if record.report:
            fees = sum(record.report.fees.values())
            paid -= fees
        return esc.amount, held, paid, refunds, fees

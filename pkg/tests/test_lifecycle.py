import networkx as nx
import numpy as np
import pytest

from agentfabric.incentives import Bid, bid_score
from agentfabric.ledger import InsufficientFunds, Ledger
from agentfabric.lifecycle import (TERMINAL, TRANSITIONS, Coordinator, CustodyStore, IllegalTransition, Interrupt,
                                   LifecycleError, State, TaskRef, WorkerBehavior, autoscale_check,
                                   custody_reclaim, custody_register, default_arbiter)
from agentfabric.matching import NoMatch, Ranked
from agentfabric.policy import parse_policy
from agentfabric.reputation import AgentCard, ReputationRecord, ReputationStore
from agentfabric.tasks import DAGError, Subtask, SubtaskDAG, TaskRequest, single_subtask_dag

MANAGER = 0


def world(n=6, balance=100, **kw):
    led = Ledger()
    store = ReputationStore(AgentCard(i, {"x"}, attributes={"ok"}) for i in range(n))
    for i in range(n):
        led.create_account(i)
        led.mint(i, balance)
    return Coordinator(led, store, **kw)


def ranked(*ids):
    return [Ranked(i, 1.0, (0, 0, 0, 0)) for i in ids]


def bidder(price=5, quality=0.9, time=1):
    return lambda aid, rec, sid: Bid(aid, price, quality, time)


def dag_of(*specs, edges=()):
    return SubtaskDAG(tuple(Subtask(sid, {"x"}, share, dur) for sid, share, dur in specs), edges)


def started(coord, dag, budget=100, deadline=10, policy="", rid="t"):
    req = TaskRequest(rid, "job", deadline, parse_policy(policy), budget, frozenset({"x"}))
    rec = coord.publish(req, MANAGER)
    coord.decompose(rec, lambda r: dag)
    return rec


def behaviors(**by_agent):
    default = WorkerBehavior()
    return lambda aid: by_agent.get(f"a{aid}", default)


# -- publish / decompose ------------------------------------------------------------

def test_publish_locks_budget():
    c = world()
    rec = c.publish(TaskRequest("t", "", 10, budget=100), MANAGER)
    assert c.ledger.balance(MANAGER) == 0 and c.ledger.escrowed == 100
    assert rec.state is State.PUBLISHED


def test_publish_rejections():
    c = world(balance=99)
    before = c.ledger.snapshot()
    with pytest.raises(InsufficientFunds):
        c.publish(TaskRequest("t", "", 10, budget=100), MANAGER)
    assert c.ledger.snapshot() == before and "t" not in c.records
    c.publish(TaskRequest("t", "", 10, budget=10), MANAGER)
    with pytest.raises(LifecycleError):
        c.publish(TaskRequest("t", "", 10, budget=10), MANAGER)


def test_request_invariants():
    with pytest.raises(ValueError):
        TaskRequest("t", "", 10, budget=0)
    with pytest.raises(ValueError):
        TaskRequest("t", "", 5, published_at=5)


def test_decompose_examples():
    c = world()
    rec = started(c, single_subtask_dag(TaskRequest("t", "", 10)))
    assert rec.state is State.DISCOVERING and list(rec.subtasks) == ["t.0"]
    with pytest.raises(DAGError):
        dag_of(("a", 0.5, 1), ("b", 0.5, 1), edges=[("a", "b"), ("b", "a")])
    with pytest.raises(DAGError):
        dag_of(("a", 0.5, 1), ("b", 0.4, 1))
    with pytest.raises(LifecycleError):
        c.decompose(rec, lambda r: dag_of(("a", 1.0, 1)))


def test_three_node_topological_order_matches_oracle():
    edges = [("c", "a"), ("a", "b")]
    dag = dag_of(("a", 0.5, 1), ("b", 0.3, 1), ("c", 0.2, 1), edges=edges)
    oracle = nx.DiGraph(edges)
    pos = {sid: i for i, sid in enumerate(dag.order)}
    assert all(pos[u] < pos[v] for u, v in oracle.edges)
    assert set(dag.order) == {"a", "b", "c"}


def test_deadlines_follow_critical_path():
    dag = dag_of(("a", 0.5, 2), ("b", 0.5, 3), edges=[("a", "b")])
    assert dag.apportion_deadlines(0, 10) == {"a": 4, "b": 10}


# -- recruit ------------------------------------------------------------------------

def test_single_bidder_wins_with_empty_pool():
    c = world()
    rec = started(c, dag_of(("s", 1.0, 1)))
    a = c.recruit(rec, "s", ranked(3), bidder())
    assert a.agent == 3 and rec.subtasks["s"].fallback_pool == []
    assert [t[2] for t in rec.transitions] == [State.DISCOVERING, State.RECRUITING, State.EXECUTING]


def test_identical_bids_tie_break():
    c = world()
    rec = started(c, dag_of(("s", 1.0, 1)))
    assert c.recruit(rec, "s", ranked(5, 3), bidder()).agent == 3
    c2 = world()
    c2.reputation[5].reputation = ReputationRecord(0.9, 0.9, 0.9, 0.9, rating_count=1)
    rec2 = started(c2, dag_of(("s", 1.0, 1)))
    assert c2.recruit(rec2, "s", ranked(3, 5), bidder()).agent == 5


def test_bid_formula_decides_winner():
    c = world()
    rec = started(c, dag_of(("s", 1.0, 1)), budget=20, deadline=10)
    bids = {1: Bid(1, 10, 0.9, 5), 2: Bid(2, 5, 0.5, 5)}
    s1, s2 = (bid_score(bids[i], 10, 20) for i in (1, 2))
    assert s1 == pytest.approx(0.5) and s2 == pytest.approx(0.35)
    a = c.recruit(rec, "s", ranked(2, 1), lambda aid, r, sid: bids[aid])
    assert a.agent == 1 and [b.agent_id for b in rec.subtasks["s"].fallback_pool] == [2]


def test_no_bids_is_no_match_and_ineligible_agents_skipped():
    c = world()
    rec = started(c, dag_of(("s", 1.0, 1)), policy="has(vip)")
    with pytest.raises(NoMatch) as info:
        c.recruit(rec, "s", ranked(1, 2), bidder())
    assert info.value.stage == "bids"
    c.reputation[2].attributes = frozenset({"vip"})
    assert c.recruit(rec, "s", ranked(MANAGER, 1, 2), bidder()).agent == 2


def test_overpriced_bids_ignored():
    c = world()
    rec = started(c, dag_of(("s", 1.0, 1)), budget=10)
    with pytest.raises(NoMatch):
        c.recruit(rec, "s", ranked(1), bidder(price=11))


def test_unaffordable_stake_falls_through():
    c = world(stake_for=lambda aid, rec: 50)
    c.ledger.transfer(1, 2, 60)
    rec = started(c, dag_of(("s", 1.0, 1)))
    a = c.recruit(rec, "s", ranked(1, 2), bidder())
    assert a.agent == 2 and a.stake == 50 and c.ledger.balance(2) == 110
    assert c.ledger.conserved()


# -- execute / monitor ----------------------------------------------------------------

def executing(c, dag, agents, **kw):
    rec = started(c, dag, **kw)
    for sid, aid in zip(dag.order, agents):
        c.recruit(rec, sid, ranked(*aid) if isinstance(aid, tuple) else ranked(aid), bidder())
    return rec


def test_deterministic_worker_completes_in_one_step(rng):
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [1])
    evs = c.execute_step(rec, behaviors(), rng, 1)
    assert [e.event for e in evs] == ["start", "complete"]
    assert c.monitor_check(rec, 1) == []
    assert c.verify(rec, 1) and rec.state is State.VERIFYING


def test_certain_failure_raises_fault_interrupt(rng):
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [1])
    evs = c.execute_step(rec, behaviors(a1=WorkerBehavior(success_probability=0.0)), rng, 1)
    assert evs[-1].event == "fault"
    assert c.monitor_check(rec, 1) == [Interrupt("s", "fault", 1)]


def test_dependency_gating(rng):
    c = world()
    dag = dag_of(("a", 0.5, 1), ("b", 0.5, 1), edges=[("a", "b")])
    rec = executing(c, dag, [1, 2])
    slow = behaviors(a1=WorkerBehavior(latency=3))
    for now in (1, 2):
        c.execute_step(rec, slow, rng, now)
        assert rec.subtasks["b"].active.status == "assigned"
    c.execute_step(rec, slow, rng, 3)
    assert rec.subtasks["a"].status == "completed" and rec.subtasks["b"].active.started_at is None
    c.execute_step(rec, slow, rng, 4)
    assert rec.subtasks["b"].active.started_at == 4


def test_timeout_interrupt(rng):
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [1], deadline=3)
    hang = behaviors(a1=WorkerBehavior(success_probability=0.0, fault_mode="hang"))
    for now in (1, 2, 3):
        c.execute_step(rec, hang, rng, now)
        assert c.monitor_check(rec, now) == []
    assert c.monitor_check(rec, 4) == [Interrupt("s", "timeout", 1)]


# -- fallback ---------------------------------------------------------------------------

def test_promotion_queue(rng):
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [(1, 2, 3)])
    st = rec.subtasks["s"]
    assert [b.agent_id for b in st.fallback_pool] == [2, 3]
    new = c.promote_fallback(rec, "s", Interrupt("s", "fault", 1), 1)
    assert new.agent == 2 and [b.agent_id for b in st.fallback_pool] == [3]
    assert 1 in st.excluded and not c.eligible(rec, 1, "s")


def test_exhausted_pool_disputes():
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [1])
    assert c.promote_fallback(rec, "s", Interrupt("s", "fault", 1), 1) is None
    assert rec.state is State.DISPUTED


def test_failed_agent_never_reselected():
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [(1, 2)])
    st = rec.subtasks["s"]
    st.fallback_pool.insert(0, Bid(1, 5, 0.9, 1))
    assert c.promote_fallback(rec, "s", Interrupt("s", "fault", 1), 1).agent == 2


def test_failure_slashes_stake_to_publisher():
    c = world(stake_for=lambda aid, rec: 7)
    rec = executing(c, dag_of(("s", 1.0, 1)), [(1, 2)])
    c.promote_fallback(rec, "s", Interrupt("s", "fault", 1), 1)
    assert c.ledger.balance(1) == 93 and c.ledger.balance(MANAGER) == 7
    assert c.ledger.conserved()


# -- review / settle ----------------------------------------------------------------------

def test_arbiter_examples():
    assert default_arbiter(0.8, 0.9) == 1.0
    assert default_arbiter(0.8, 0.0) == 0.0
    assert default_arbiter(0.8, 0.7) == pytest.approx(0.5)
    assert default_arbiter(0.8, None) == 0.0


def completed_pair(c, rng, q1=1.0, q2=1.0):
    dag = dag_of(("a", 0.6, 1), ("b", 0.4, 1))
    rec = executing(c, dag, [1, 2])
    c.execute_step(rec, behaviors(a1=WorkerBehavior(quality=q1), a2=WorkerBehavior(quality=q2)), rng, 1)
    assert c.verify(rec, 1)
    return rec


def test_settle_hand_example(rng):
    c = world()
    rec = completed_pair(c, rng)
    rep = c.settle(rec, {"a": 1.0, "b": 0.5}, 2)
    assert rep.payouts == {1: 60, 2: 20} and rep.refund == 20
    assert (c.ledger.balance(1), c.ledger.balance(2), c.ledger.balance(MANAGER)) == (160, 120, 20)
    assert rec.state is State.SETTLED and c.ledger.conserved()


def test_settle_extremes(rng):
    c = world()
    rep = c.settle(completed_pair(c, rng), {"a": 1.0, "b": 1.0})
    assert rep.refund == 0 and sum(rep.payouts.values()) == 100
    c = world()
    rec = completed_pair(c, rng)
    rec.state = State.DISPUTED
    rep = c.settle(rec, {"a": 0.0, "b": 0.0})
    assert rep.refund == 100 and sum(rep.payouts.values()) == 0 and rec.state is State.FAILED


def test_settle_idempotent(rng):
    c = world()
    rec = completed_pair(c, rng)
    first = c.settle(rec, {"a": 1.0, "b": 0.5})
    snap = c.ledger.snapshot()
    assert c.settle(rec, {"a": 0.0, "b": 0.0}) is first
    assert c.ledger.snapshot() == snap


def test_review_requires_dispute_and_interpolates(rng):
    c = world()
    rec = completed_pair(c, rng, q1=0.9, q2=0.9)
    with pytest.raises(LifecycleError):
        c.review(rec)  # quality met projections: no dispute
    c = world()
    rec = completed_pair(c, rng, q1=0.9, q2=0.7)  # bids project 0.9
    assert rec.dispute
    assert c.review(rec) == {"a": 1.0, "b": pytest.approx(0.0)}


def test_reviewer_failure_refunds_everything(rng):
    c = world()
    rec = completed_pair(c, rng, q2=0.5)

    def broken(p, d):
        raise RuntimeError("arbiter offline")

    assert c.review(rec, broken) == {"a": 0.0, "b": 0.0}
    assert c.settle(rec).refund == 100


# -- feedback -------------------------------------------------------------------------------

def test_feedback_success_and_idempotency(rng):
    c = world()
    rec = completed_pair(c, rng)
    c.settle(rec)
    outs = c.feedback(rec)
    assert {o.agent_id for o in outs} == {1, 2}
    assert c.reputation[1].reputation.successes == 1
    assert c.feedback(rec) == []
    assert c.reputation[1].reputation.successes == 1


def test_feedback_timeout_lowers_reliability(rng):
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [1], deadline=2)
    hang = behaviors(a1=WorkerBehavior(success_probability=0.0, fault_mode="hang"))
    for now in (1, 2, 3):
        c.execute_step(rec, hang, rng, now)
        c.handle_interrupts(rec, now)
    assert rec.state is State.DISPUTED
    c.review(rec)
    c.settle(rec)
    assert rec.state is State.FAILED
    c.feedback(rec)
    r = c.reputation[1].reputation
    assert r.successes == 0 and r.attempts == 1
    assert r.reliability < 0.5


def test_feedback_requires_terminal():
    c = world()
    rec = executing(c, dag_of(("s", 1.0, 1)), [1])
    with pytest.raises(LifecycleError):
        c.feedback(rec)


# -- custody ---------------------------------------------------------------------------------

def test_custody_proxy_fee_and_uniqueness(rng):
    c = world(custody_fee_rate=0.01)
    custody_register(1, 4, c.custody)
    with pytest.raises(LifecycleError):
        custody_register(1, 5, c.custody)
    with pytest.raises(LifecycleError):
        custody_register(2, 1, c.custody)  # offline agents cannot take custody
    rec = executing(c, dag_of(("s", 1.0, 1)), [1])
    a = rec.subtasks["s"].active
    assert a.proxy == 4
    c.execute_step(rec, behaviors(), rng, 1)
    c.verify(rec, 1)
    rep = c.settle(rec)
    assert rep.fees == {4: 1} and rep.payouts == {1: 99}
    assert c.custody.compensation[4] == 1 and c.ledger.conserved()


def test_custody_reclaim_rules():
    store = CustodyStore()
    q = custody_register(1, 4, store)
    q.entries += [TaskRef("t1", "s"), TaskRef("t2", "s")]
    assert custody_reclaim(1, store) == [TaskRef("t1", "s"), TaskRef("t2", "s")]
    assert 1 not in store.queues
    with pytest.raises(LifecycleError):
        custody_reclaim(1, store)
    q = custody_register(1, 4, store)
    q.entries.append(TaskRef("t3", "s"))
    assert custody_reclaim(1, store, in_flight=lambda ref: True) == []


def test_coordinator_reclaim_keeps_inflight_with_custodian(rng):
    c = world()
    custody_register(1, 4, c.custody)
    pending = executing(c, dag_of(("s", 1.0, 1)), [1], rid="p", budget=50)
    running = executing(c, dag_of(("s", 1.0, 1)), [1], rid="r", budget=50)
    c.execute_step(running, behaviors(a1=WorkerBehavior(latency=5)), rng, 1)
    refs = c.reclaim(1, 2)
    assert refs == [TaskRef("p", "s")]
    assert pending.subtasks["s"].active.proxy is None
    assert running.subtasks["s"].active.proxy == 4


# -- autoscale and transitions ------------------------------------------------------------------

def test_autoscale_examples():
    assert autoscale_check({1: (0.1, 0), 2: (0.5, 2)}, 0.8, 3) == []
    assert autoscale_check({1: (0.1, 3)}, 0.8, 3) == []
    assert [d.agent_id for d in autoscale_check({1: (0.95, 0), 2: (0.2, 1)}, 0.8, 3)] == [1]


def test_transition_table():
    c = world()
    rec = started(c, dag_of(("s", 1.0, 1)))
    with pytest.raises(IllegalTransition):
        rec.transition(State.SETTLED, 1)
    for s in TERMINAL:
        assert TRANSITIONS[s] == frozenset()


def test_unmatched_task_fails_with_full_refund():
    c = world(stake_for=lambda aid, rec: 5)
    rec = started(c, dag_of(("a", 0.5, 1), ("b", 0.5, 1)))
    c.recruit(rec, "a", ranked(1), bidder())
    c.fail_unmatched(rec, "b", 1)
    assert rec.state is State.FAILED
    assert c.ledger.balance(MANAGER) == 100 and c.ledger.balance(1) == 100
    spend, held, paid, refunds, fees = c.escrow_accounting(rec)
    assert spend == held + paid + refunds + fees and held == 0

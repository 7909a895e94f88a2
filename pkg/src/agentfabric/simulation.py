"""End-to-end round-based simulation of one scenario trial.

Per round: custody reclaims, task publication with gossip discovery, a
trust diffusion phase, matching and bidding for discovered tasks, execution
with monitors and failover, settlement and feedback, then the autoscale
rule. All randomness comes from per-(trial, consumer, item) streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as streams
from .gossip import GossipParams, expected_total_messages, propagate, trace_rows
from .incentives import (AgentStats, Bid, OrchestratorStats, StakeParams, completion_rate, composite_score,
                         distribute_orchestrator_pool, median_completion_time, orchestrator_score,
                         required_stake, speed_score, success_rate)
from .ledger import Ledger
from .lifecycle import (Coordinator, CustodyStore, Event, State, WorkerBehavior, autoscale_check,
                        custody_register)
from .matching import (CapabilityVector, NoMatch, RuntimeStats, capability_scores, capability_vector,
                       embed_card, match_pipeline, overlap_scorer)
from .policy import AccessDenied, seal
from .reputation import AgentCard, ReputationStore, composite_reputation, rate_limit_check
from .scenario import AgentSpec, ScenarioConfig
from .topology import Graph, generate_graph, is_connected
from .trust import TrustField, diffuse_step, init_trust, trajectory_rows

TREASURY = "treasury"


@dataclass
class MetricsReport:
    gossip: list[tuple] = field(default_factory=list)
    trust: list[tuple] = field(default_factory=list)
    matching: list[tuple] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)
    ledger: list[tuple] = field(default_factory=list)
    reputation: list[tuple] = field(default_factory=list)
    balances: list[tuple] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


class SimulationError(RuntimeError):
    pass


def build_population(config: ScenarioConfig, trial: int = 0) -> tuple[list[AgentCard], dict[int, AgentSpec]]:
    """Cards for every graph node; unspecified nodes draw tags from the vocabulary."""
    pop = config.population
    explicit = {a.id: a for a in pop.agents}
    r = streams.stream(config.seed, trial, streams.POPULATION)
    vocab = sorted(pop.vocabulary)
    attrs_vocab = sorted(pop.attribute_vocabulary)
    cards, specs = [], {}
    for i in range(config.graph.n):
        # draw for every node so explicit overrides never shift other nodes' tags
        k = min(pop.tags_per_agent, len(vocab))
        drawn = frozenset(vocab[j] for j in r.choice(len(vocab), size=k, replace=False)) if k else frozenset()
        drawn_attrs = frozenset(a for a, u in zip(attrs_vocab, r.random(len(attrs_vocab)))
                                if u < pop.attribute_probability)
        spec = explicit.get(i) or AgentSpec(i, drawn, drawn_attrs, pop.behavior)
        specs[i] = spec
        cards.append(AgentCard(i, spec.tags, spec.attributes, latency_indicator=0.0,
                               function_signatures=tuple(f"ask:{t}" for t in sorted(spec.tags))))
    return cards, specs


class Simulation:
    def __init__(self, config: ScenarioConfig, trial: int = 0, gossip_enabled: bool = True):
        self.config = config
        self.trial = trial
        self.gossip_enabled = gossip_enabled
        self.report = MetricsReport()
        g = config.graph
        graph_seed = int(streams.stream(config.seed, trial, streams.GRAPH).integers(2**63))
        self.graph: Graph = generate_graph(g.n, g.mean_degree, g.kind, graph_seed, g.rewire_probability)

        cards, self.specs = build_population(config, trial)
        self.behaviors: dict[int, WorkerBehavior] = {i: s.behavior for i, s in self.specs.items()}
        for f in config.faults:
            b = self.behaviors[f.agent]
            self.behaviors[f.agent] = replace(
                b, **{k: v for k, v in (("success_probability", f.success_probability),
                                        ("fault_mode", f.fault_mode), ("quality", f.quality),
                                        ("latency", f.latency)) if v is not None})
        self.store = ReputationStore(cards)
        self.parent: dict[int, int] = {c.id: c.id for c in cards}
        self.replicas: dict[int, list[int]] = {}

        inc = config.incentives
        self.ledger = Ledger()
        self.ledger.create_account(TREASURY)
        if inc.orchestrator_pool:
            self.ledger.mint(TREASURY, inc.orchestrator_pool)
        for c in cards:
            self.ledger.create_account(c.id)
            bal = self.specs[c.id].balance
            bal = inc.initial_balance if bal is None else int(bal)
            if bal > 0:
                self.ledger.mint(c.id, bal)

        self.custody = CustodyStore()
        self.coord = Coordinator(self.ledger, self.store, self.custody, stake_for=self._stake_for,
                                 bid_weights=inc.bid_weights, fallback_size=inc.fallback_size,
                                 custody_fee_rate=inc.custody_fee_rate, timeout_grace=inc.timeout_grace,
                                 rate_limit=self._rate_ok)
        for aid in sorted(self.specs):
            s = self.specs[aid]
            if s.offline_until > 0 and s.custodian is not None:
                custody_register(aid, s.custodian, self.custody)

        self.trust: TrustField = init_trust(cards, config.trust.init, config.trust.learning_rate)
        self.replica_trust: dict[int, float] = {}
        self.report.trust.extend(trajectory_rows(self.trust))
        dim = config.matching.dimension
        self.embeddings = {c.id: embed_card(c, dim) for c in cards}
        self.informed: dict[str, frozenset[int]] = {}
        self.seen = tuple(frozenset() for _ in range(self.graph.node_count))
        self.predicted_messages = 0.0
        self.completion_times: dict[frozenset, list[int]] = {}
        self.dirty_reputation: set[int] = set()
        self.exec_rngs: dict[str, np.random.Generator] = {}
        self.task_index = {t.request.id: k for k, t in enumerate(config.tasks)}

    # -- agent state helpers -------------------------------------------------------

    def behavior(self, aid: int) -> WorkerBehavior:
        return self.behaviors[aid]

    def trust_of(self, aid: int) -> float:
        if aid in self.replica_trust:
            return self.replica_trust[aid]
        return self.trust[aid]

    def online(self, aid: int, now: int) -> bool:
        return self.specs[self.parent[aid]].offline_until <= now if aid == self.parent[aid] else True

    def _active_assignments(self, aid: int) -> tuple[int, int]:
        running = pending = 0
        for rec in self.coord.records.values():
            if rec.terminal:
                continue
            for st in rec.subtasks.values():
                a = st.active
                if a is not None and a.agent == aid:
                    if a.status == "running":
                        running += 1
                    elif a.status == "assigned":
                        pending += 1
        return running, pending

    def _rate_ok(self, aid: int) -> bool:
        m = self.config.matching
        running, pending = self._active_assignments(aid)
        return rate_limit_check(self.store[aid].reputation, m.rate_limit_threshold, running + pending,
                                m.rate_limit_cap)

    def agent_stats(self, aid: int, tags: frozenset) -> AgentStats:
        rec = self.store[aid].reputation
        t_m = median_completion_time(self.completion_times.get(frozenset(tags), []))
        own = self.store[aid].latency_indicator or None
        return AgentStats(rec.successes, rec.attempts, rec.completed, rec.claimed, t_m, own)

    def performance(self, aid: int, tags: frozenset) -> float:
        stats = self.agent_stats(aid, tags)
        ss = speed_score(stats.median_peer_time, stats.own_time) if stats.median_peer_time and stats.own_time else 0.0
        return composite_score(success_rate(stats), ss, completion_rate(stats), self.config.incentives.weights)

    def _stake_for(self, aid: int, record) -> int:
        params = StakeParams(self.config.incentives.base_stake, record.complexity)
        return required_stake(params, self.performance(aid, record.request.requirement_tags))

    def capabilities(self, ids, now: int) -> dict[int, CapabilityVector]:
        out = {}
        for aid in ids:
            card = self.store[aid]
            rec = card.reputation
            b = self.behaviors[aid]
            running, pending = self._active_assignments(aid)
            avail = 1.0 if self.online(aid, now) else (0.5 if self.custody.custodian_of(aid) is not None else 0.0)
            out[aid] = capability_vector(RuntimeStats(rec.success_rate if rec.attempts else 0.5,
                                                      card.latency_indicator or float(b.latency), avail,
                                                      float(running + pending)),
                                         self.config.matching.load_cap)
        return out

    # -- phases ------------------------------------------------------------------------

    def _event(self, now, task, subtask, event, agent="", detail=""):
        self.coord.events.append(Event(now, task, subtask, event, agent, detail))

    def publish_due(self, now: int) -> None:
        cfg = self.config
        for k, t in enumerate(cfg.tasks):
            if t.request.published_at != now:
                continue
            req = t.request
            if self.ledger.balance(t.manager) < req.budget or req.id in self.coord.records:
                self._event(now, req.id, "", "publish_rejected", t.manager,
                            "insufficient balance" if req.id not in self.coord.records else "duplicate")
                continue
            record = self.coord.publish(req, t.manager, now, t.complexity)
            self.coord.decompose(record, lambda rec, dag=t.dag: dag, now)
            if self.gossip_enabled and cfg.graph.n > 1:
                params = GossipParams(cfg.gossip.forward_probability, cfg.gossip.ttl, max(1, len(cfg.tasks)))
                g_rng = streams.stream(cfg.seed, self.trial, streams.GOSSIP, k)
                state, trace = propagate(self.graph, {t.manager}, params, g_rng, request_id=req.id,
                                         seen=self.seen, stop_on_saturation=False)
                self.seen = state.seen
                self.informed[req.id] = state.informed
                self.report.gossip.extend(trace_rows(k, trace))
                self.predicted_messages += expected_total_messages(
                    1, params.forward_probability, self.graph.mean_degree, [r.informed for r in trace],
                    len(trace) - 1)
                self._event(now, req.id, "", "gossip", t.manager,
                            f"informed={state.size} messages={sum(r.messages for r in trace)}")
            else:
                self.informed[req.id] = frozenset(range(self.graph.node_count))

    def trust_phase(self) -> None:
        if self.dirty_reputation:
            updates = {aid: composite_reputation(self.store[aid].reputation)
                       for aid in sorted(self.dirty_reputation) if aid < len(self.trust)}
            self.trust = self.trust.with_scores(updates)
            for aid in sorted(self.dirty_reputation):
                if aid in self.replica_trust:
                    self.replica_trust[aid] = composite_reputation(self.store[aid].reputation)
            self.dirty_reputation.clear()
        for _ in range(self.config.trust.steps_per_round):
            self.trust = diffuse_step(self.trust, self.graph)
            self.report.trust.extend(trajectory_rows(self.trust))

    def _bid(self, aid: int, record, subtask_id: str, now: int) -> Bid | None:
        spec = self.specs[self.parent[aid]]
        if not self.online(aid, now) and self.custody.custodian_of(aid) is None:
            return None
        try:
            seal(record.request).open(self.store[aid].attributes)
        except AccessDenied:
            return None
        b = self.behaviors[aid]
        bounty = record.allocation(subtask_id)
        price = min(int(bounty), max(0, math.ceil(float(bounty) * spec.price_factor)))
        quality = b.quality if spec.claimed_quality is None else float(spec.claimed_quality)
        return Bid(aid, price, quality, b.latency + b.jitter / 2)

    def recruit_discovered(self, now: int) -> None:
        m = self.config.matching
        for rec in list(self.coord.records.values()):
            if rec.state not in (State.DISCOVERING, State.RECRUITING):
                continue
            informed = self.informed.get(rec.id, frozenset())
            ids = sorted(a for a in self.store.cards
                         if self.parent[a] in informed and a != rec.manager)
            for sid in rec.dag.order:
                st = rec.subtasks[sid]
                if st.active is not None or rec.state not in (State.DISCOVERING, State.RECRUITING):
                    continue
                sub_req = replace(rec.request, id=sid, requirement_tags=st.spec.tags)
                assigned = False
                for attempt, thresholds in enumerate((m.thresholds, replace(m.thresholds, candidate_threshold=-1.0,
                                                                            filter_threshold=0.0))):
                    if not ids:
                        break
                    population = [(self.store[a], self.embeddings[a]) for a in ids]
                    caps = self.capabilities(ids, now)
                    try:
                        result = match_pipeline(population, sub_req, overlap_scorer, thresholds, m.weights,
                                                _TrustView(self), caps, m.dimension,
                                                capability_score=capability_scores(caps))
                        self.report.matching.extend(result.rows)
                        self.coord.recruit(rec, sid, result.ranked,
                                           lambda aid, r, s: self._bid(aid, r, s, now), now)
                        assigned = True
                        break
                    except NoMatch as exc:
                        self._event(now, rec.id, sid, "no_match", "", f"stage={exc.stage} attempt={attempt}")
                        rec.no_match_retries += 1
                if not assigned:
                    self.coord.fail_unmatched(rec, sid, now)
                    self.finish(rec, now)
                    break

    def execute(self, now: int) -> None:
        for rec in list(self.coord.records.values()):
            if rec.state is not State.EXECUTING:
                continue
            r = self.exec_rngs.setdefault(
                rec.id, streams.stream(self.config.seed, self.trial, streams.EXECUTION, self.task_index[rec.id]))
            self.coord.execute_step(rec, self.behavior, r, now)
            self.coord.handle_interrupts(rec, now)
            if self.coord.verify(rec, now):
                if rec.dispute:
                    self.coord.review(rec, now=now)
                    self.coord.settle(rec, rec.verdicts, now)
                else:
                    self.coord.settle(rec, {sid: 1.0 for sid in rec.subtasks}, now)
                self.finish(rec, now)
            elif rec.state is State.DISPUTED:
                self.coord.review(rec, now=now)
                self.coord.settle(rec, rec.verdicts, now)
                self.finish(rec, now)

    def finish(self, rec, now: int) -> None:
        outcomes = self.coord.feedback(rec, now)
        for o in outcomes:
            self.dirty_reputation.add(o.agent_id)
            if o.completed and o.latency is not None:
                self.completion_times.setdefault(frozenset(o.task_tags), []).append(o.latency)

    def autoscale(self, now: int) -> None:
        a = self.config.autoscale
        if not a.enabled:
            return
        metrics = {}
        for aid in sorted(self.store.cards):
            running, pending = self._active_assignments(aid)
            cap = self.specs[self.parent[aid]].capacity
            metrics[aid] = (running / cap, pending)
        for d in autoscale_check(metrics, a.cpu_threshold, a.pending_threshold):
            root = self.parent[d.agent_id]
            if len(self.replicas.get(root, [])) >= a.max_replicas:
                continue
            new_id = max(self.store.cards) + 1
            parent_card = self.store[d.agent_id]
            card = AgentCard(new_id, parent_card.tags, parent_card.attributes,
                             function_signatures=parent_card.function_signatures)
            self.store.add(card)
            self.parent[new_id] = root
            self.replicas.setdefault(root, []).append(new_id)
            self.behaviors[new_id] = self.behaviors[d.agent_id]
            self.embeddings[new_id] = self.embeddings[d.agent_id]
            self.replica_trust[new_id] = self.trust_of(d.agent_id)
            self.ledger.create_account(new_id)
            half = self.ledger.balance(d.agent_id) // 2
            if half > 0:
                self.ledger.transfer(d.agent_id, new_id, half)
            self._event(now, "", "", "autoscale", d.agent_id, f"replica={new_id} cause={d.cause}")

    def reclaim_returning(self, now: int) -> None:
        for aid in sorted(self.custody.queues):
            if self.specs[aid].offline_until == now:
                refs = self.coord.reclaim(aid, now)
                self._event(now, "", "", "custody_reclaim", aid, f"reclaimed={len(refs)}")

    def compensate_orchestrators(self, now: int) -> dict:
        inc = self.config.incentives
        scores = []
        for mgr in sorted({r.manager for r in self.coord.records.values()}):
            recs = [r for r in self.coord.records.values() if r.manager == mgr]
            matched = [(r, sid) for r in recs for sid, st in r.subtasks.items() if st.history]
            good = [1 for r, sid in matched if r.state is State.SETTLED and (r.verdicts or {}).get(sid, 0) > 0]
            m_eff = len(good) / len(matched) if matched else 0.0
            clean = [r for r in recs if r.state is State.SETTLED
                     and not any(to is State.DISPUTED for _, _, to in r.transitions)]
            f_rel = len(clean) / len(recs) if recs else 0.0
            scores.append((mgr, orchestrator_score(OrchestratorStats(m_eff, f_rel, inc.orchestrator_delta,
                                                                     inc.orchestrator_epsilon))))
        pool = self.ledger.balance(TREASURY)
        if not scores or pool == 0:
            return {}
        payments = distribute_orchestrator_pool(scores, pool, self.ledger, TREASURY)
        for mgr, amt in sorted(payments.items()):
            self._event(now, "", "", "orchestrator_reward", mgr, f"amount={amt}")
        return payments

    def run(self) -> MetricsReport:
        cfg = self.config
        horizon = cfg.horizon
        last_publish = max((t.request.published_at for t in cfg.tasks), default=0)
        now = 0
        for now in range(horizon + 1):
            self.reclaim_returning(now)
            self.publish_due(now)
            self.trust_phase()
            self.recruit_discovered(now)
            self.execute(now)
            self.autoscale(now)
            self.report.balances.extend((now, acct, bal) for acct, bal in
                                        sorted(self.ledger.accounts.items(), key=lambda kv: str(kv[0])))
            if now >= last_publish and all(r.terminal for r in self.coord.records.values()):
                break
        stuck = [r.id for r in self.coord.records.values() if not r.terminal]
        if stuck:
            raise SimulationError(f"tasks {stuck} did not reach a terminal state within {horizon} rounds")
        payments = self.compensate_orchestrators(now)
        rep = self.report
        rep.events = [tuple(e) for e in self.coord.events]
        rep.ledger = self.ledger.journal_rows()
        rep.reputation = self.store.snapshot_rows()
        rep.summary = self.summarize(payments, now)
        return rep

    def summarize(self, payments: dict, final_round: int) -> dict:
        recs = list(self.coord.records.values())
        settled = [r for r in recs if r.state is State.SETTLED]
        latencies = [r.terminal_at - r.published_at for r in settled]
        releases = [e for e in self.ledger.journal if e.op == "release"]
        return {
            "tasks_declared": len(self.config.tasks),
            "tasks_published": len(recs),
            "tasks_settled": len(settled),
            "tasks_failed": sum(r.state is State.FAILED for r in recs),
            "task_success_fraction": len(settled) / len(recs) if recs else 0.0,
            "mean_settlement_latency": sum(latencies) / len(latencies) if latencies else 0.0,
            "gossip_messages": sum(row[3] for row in self.report.gossip),
            "gossip_messages_predicted": self.predicted_messages,
            "graph_connected": is_connected(self.graph),
            "graph_mean_degree": self.graph.mean_degree,
            "escrow_released": sum(e.amount for e in releases),
            "orchestrator_paid": sum(payments.values()),
            "ledger_conserved": self.ledger.conserved(),
            "total_minted": self.ledger.total_minted,
            "final_round": final_round,
        }


class _TrustView:
    def __init__(self, sim: Simulation):
        self.sim = sim

    def __getitem__(self, aid: int) -> float:
        return self.sim.trust_of(aid)


def run_simulation(config: ScenarioConfig, trial: int = 0, gossip_enabled: bool = True) -> MetricsReport:
    return Simulation(config, trial, gossip_enabled).run()

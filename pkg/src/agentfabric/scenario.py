"""Scenario configuration: JSON loading and cross-module validation.

A scenario is a JSON object. Only ``seed`` is mandatory; every other block
falls back to defaults. See ``scenarios/`` for worked examples and the README
for the full schema.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .incentives import BidWeights, IncentiveWeights, OrchestratorStats, StakeParams
from .lifecycle import WorkerBehavior
from .matching import MatchThresholds, RankWeights
from .policy import PolicySyntaxError, parse_policy
from .tasks import DAGError, Subtask, SubtaskDAG, TaskRequest
from .topology import KINDS


class ScenarioError(ValueError):
    """One or more validation failures, all reported together."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.errors))


@dataclass(frozen=True)
class GraphSpec:
    n: int = 20
    mean_degree: float = 4.0
    kind: str = "random"
    rewire_probability: float = 0.1


@dataclass(frozen=True)
class GossipSpec:
    forward_probability: float = 0.5
    ttl: int = 10
    users: int = 1  # recorded only; no formula consumes it


@dataclass(frozen=True)
class TrustSpec:
    learning_rate: float = 0.05
    init: str = "from_reputation"
    steps_per_round: int = 1


@dataclass(frozen=True)
class MatchingSpec:
    dimension: int = 64
    thresholds: MatchThresholds = MatchThresholds(0.0, 0.5, 5)
    weights: RankWeights = RankWeights()
    load_cap: float = 10.0
    rate_limit_threshold: float = 0.3
    rate_limit_cap: int = 1


@dataclass(frozen=True)
class IncentiveSpec:
    weights: IncentiveWeights = IncentiveWeights()
    base_stake: float = 10
    orchestrator_delta: float = 0.5
    orchestrator_epsilon: float = 0.5
    orchestrator_pool: int = 0
    bid_weights: BidWeights = BidWeights()
    custody_fee_rate: float = 0.01
    fallback_size: int = 2
    initial_balance: int = 100
    timeout_grace: int = 0


@dataclass(frozen=True)
class AgentSpec:
    id: int
    tags: frozenset[str]
    attributes: frozenset[str] = frozenset()
    behavior: WorkerBehavior = WorkerBehavior()
    balance: int | None = None
    price_factor: float = 0.8
    claimed_quality: float | None = None
    offline_until: int = 0
    custodian: int | None = None
    capacity: int = 2


@dataclass(frozen=True)
class PopulationSpec:
    agents: tuple[AgentSpec, ...] = ()
    vocabulary: tuple[str, ...] = ("translate", "summarize", "search", "code", "review", "plan")
    tags_per_agent: int = 2
    attribute_vocabulary: tuple[str, ...] = ()
    attribute_probability: float = 0.5
    behavior: WorkerBehavior = WorkerBehavior()


@dataclass(frozen=True)
class TaskSpec:
    request: TaskRequest
    manager: int
    dag: SubtaskDAG
    complexity: float = 1.0


@dataclass(frozen=True)
class FaultSpec:
    agent: int
    success_probability: float | None = None
    fault_mode: str | None = None
    quality: float | None = None
    latency: int | None = None


@dataclass(frozen=True)
class AutoscaleSpec:
    cpu_threshold: float = 0.8
    pending_threshold: int = 3
    max_replicas: int = 1
    enabled: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    graph: GraphSpec = GraphSpec()
    gossip: GossipSpec = GossipSpec()
    trust: TrustSpec = TrustSpec()
    matching: MatchingSpec = MatchingSpec()
    incentives: IncentiveSpec = IncentiveSpec()
    population: PopulationSpec = PopulationSpec()
    tasks: tuple[TaskSpec, ...] = ()
    faults: tuple[FaultSpec, ...] = ()
    autoscale: AutoscaleSpec = AutoscaleSpec()
    rounds: int | None = None

    @property
    def horizon(self) -> int:
        if self.rounds is not None:
            return self.rounds
        last = max((t.request.deadline for t in self.tasks), default=0)
        return last + self.incentives.timeout_grace + 5


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def build(self, where: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, TypeError, KeyError, DAGError, PolicySyntaxError) as exc:
            self.errors.append(f"{where}: {exc}")
            return None


def _block(data: dict, key: str, errors: _Collector) -> dict:
    value = data.get(key, {})
    if not isinstance(value, dict):
        errors.errors.append(f"{key}: expected an object")
        return {}
    return value


def _behavior(d: dict | None, base: WorkerBehavior = WorkerBehavior()) -> WorkerBehavior:
    d = d or {}
    return WorkerBehavior(
        success_probability=float(d.get("success_probability", base.success_probability)),
        latency=int(d.get("latency", base.latency)),
        jitter=int(d.get("jitter", base.jitter)),
        quality=float(d.get("quality", base.quality)),
        fault_mode=str(d.get("fault_mode", base.fault_mode)),
    )


def _dag(request: TaskRequest, d: dict | None) -> SubtaskDAG:
    if not d:
        return SubtaskDAG((Subtask(f"{request.id}.0", request.requirement_tags, 1.0,
                                   max(1, (request.deadline - request.published_at) // 2)),))
    nodes = tuple(Subtask(str(n["id"]), frozenset(n.get("tags", request.requirement_tags)),
                          float(n.get("share", 1.0)), int(n.get("duration", 1)))
                  for n in d.get("nodes", []))
    edges = tuple((str(a), str(b)) for a, b in d.get("edges", []))
    return SubtaskDAG(nodes, edges)


def config_from_dict(data: Any) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError(["scenario root must be a JSON object"])
    c = _Collector()

    seed = data.get("seed")
    if seed is None:
        c.errors.append("seed: missing (runs must be reproducible; wall-clock entropy is not used)")
    elif isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        c.errors.append(f"seed: must be an unsigned 64-bit integer, got {seed!r}")

    g = _block(data, "graph", c)
    graph = c.build("graph", lambda: GraphSpec(int(g.get("n", 20)), float(g.get("mean_degree", 4.0)),
                                               str(g.get("kind", "random")),
                                               float(g.get("rewire_probability", 0.1))))
    if graph is not None:
        if graph.n < 2:
            c.errors.append("graph: n must be at least 2")
        if not 0 < graph.mean_degree < graph.n:
            c.errors.append("graph: mean_degree must lie in (0, n)")
        if graph.kind not in KINDS:
            c.errors.append(f"graph: unknown kind {graph.kind!r}")

    gd = _block(data, "gossip", c)
    gossip = c.build("gossip", lambda: GossipSpec(float(gd.get("p", 0.5)), int(gd.get("ttl", 10)),
                                                  int(gd.get("users", 1))))
    if gossip is not None:
        if not 0 <= gossip.forward_probability <= 1:
            c.errors.append("gossip: p must be in [0, 1]")
        if gossip.ttl < 0:
            c.errors.append("gossip: ttl must be non-negative")

    td = _block(data, "trust", c)
    trust = c.build("trust", lambda: TrustSpec(float(td.get("eta", 0.05)), str(td.get("init", "from_reputation")),
                                               int(td.get("steps_per_round", 1))))
    if trust is not None and trust.init not in ("from_reputation", "uniform_prior"):
        c.errors.append(f"trust: unknown init mode {trust.init!r}")

    md = _block(data, "matching", c)
    thresholds = c.build("matching.thresholds", lambda: MatchThresholds(
        float(md.get("theta0", 0.0)), float(md.get("theta1", 0.5)), int(md.get("top_k", 5))))
    weights = c.build("matching.weights (ranking)", lambda: RankWeights(**md.get("weights", {})))
    matching = None
    if thresholds is not None and weights is not None:
        matching = MatchingSpec(int(md.get("dimension", 64)), thresholds, weights,
                                float(md.get("load_cap", 10.0)),
                                float(md.get("rate_limit_threshold", 0.3)), int(md.get("rate_limit_cap", 1)))
        if matching.dimension < 8:
            c.errors.append("matching: dimension must be at least 8")

    idd = _block(data, "incentives", c)
    iw = c.build("incentives.weights (composite score)", lambda: IncentiveWeights(**idd.get("weights", {})))
    stake = c.build("incentives.base_stake", lambda: StakeParams(float(idd.get("base_stake", 10))))
    orch = c.build("incentives.orchestrator", lambda: OrchestratorStats(
        0.0, 0.0, float(idd.get("delta", 0.5)), float(idd.get("epsilon", 0.5))))
    bw = c.build("incentives.bid_weights", lambda: BidWeights(**idd.get("bid_weights", {})))
    incentives = None
    if None not in (iw, stake, orch, bw):
        incentives = IncentiveSpec(iw, stake.base_stake, orch.weight_delta, orch.weight_epsilon,
                                   int(idd.get("orchestrator_pool", 0)), bw,
                                   float(idd.get("custody_fee_rate", 0.01)), int(idd.get("fallback_size", 2)),
                                   int(idd.get("initial_balance", 100)), int(idd.get("timeout_grace", 0)))
        if incentives.orchestrator_pool < 0:
            c.errors.append("incentives: orchestrator_pool must be non-negative")
        if not 0 <= incentives.custody_fee_rate <= 1:
            c.errors.append("incentives: custody_fee_rate must be in [0, 1]")

    pd = _block(data, "population", c)
    default_behavior = c.build("population.behavior", _behavior, pd.get("behavior")) or WorkerBehavior()
    agents = []
    for k, a in enumerate(pd.get("agents", [])):
        spec = c.build(f"population.agents[{k}]", lambda a=a: AgentSpec(
            int(a["id"]), frozenset(a.get("tags", [])), frozenset(a.get("attributes", [])),
            _behavior(a.get("behavior"), default_behavior), a.get("balance"),
            float(a.get("price_factor", 0.8)), a.get("claimed_quality"),
            int(a.get("offline_until", 0)), a.get("custodian"), int(a.get("capacity", 2))))
        if spec is not None:
            agents.append(spec)
    population = PopulationSpec(tuple(agents), tuple(pd.get("vocabulary", PopulationSpec.vocabulary)),
                                int(pd.get("tags_per_agent", 2)), tuple(pd.get("attribute_vocabulary", ())),
                                float(pd.get("attribute_probability", 0.5)), default_behavior)
    if graph is not None:
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            c.errors.append("population: duplicate agent ids")
        for a in agents:
            if not 0 <= a.id < graph.n:
                c.errors.append(f"population: agent id {a.id} outside graph nodes 0..{graph.n - 1}")
            if a.custodian is not None and not 0 <= a.custodian < graph.n:
                c.errors.append(f"population: custodian {a.custodian} of agent {a.id} is not a node")

    tasks = []
    for k, t in enumerate(data.get("tasks", [])):
        def make(t=t):
            pub = int(t.get("publish_at", 0))
            req = TaskRequest(str(t["id"]), str(t.get("description", "")), int(t["deadline"]),
                              parse_policy(t.get("policy", "")), int(t["budget"]),
                              frozenset(t.get("tags", [])), pub)
            return TaskSpec(req, int(t.get("manager", 0)), _dag(req, t.get("dag")),
                            float(t.get("complexity", 1.0)))
        spec = c.build(f"tasks[{k}]", make)
        if spec is not None:
            if spec.complexity < 1:
                c.errors.append(f"tasks[{k}]: complexity multiplier must be at least 1")
            if graph is not None and not 0 <= spec.manager < graph.n:
                c.errors.append(f"tasks[{k}]: manager {spec.manager} is not a node")
            tasks.append(spec)
    if len({t.request.id for t in tasks}) != len(tasks):
        c.errors.append("tasks: duplicate task ids")

    faults = []
    for k, f in enumerate(data.get("faults", [])):
        spec = c.build(f"faults[{k}]", lambda f=f: FaultSpec(int(f["agent"]), f.get("success_probability"),
                                                              f.get("fault_mode"), f.get("quality"),
                                                              f.get("latency")))
        if spec is not None:
            faults.append(spec)

    ad = _block(data, "autoscale", c)
    autoscale = c.build("autoscale", lambda: AutoscaleSpec(float(ad.get("cpu", 0.8)), int(ad.get("pending", 3)),
                                                           int(ad.get("max_replicas", 1)),
                                                           bool(ad.get("enabled", True))))
    rounds = data.get("rounds")
    if rounds is not None and (not isinstance(rounds, int) or rounds < 1):
        c.errors.append("rounds: must be a positive integer")

    if c.errors:
        raise ScenarioError(c.errors)
    return ScenarioConfig(seed, graph, gossip, trust, matching, incentives, population, tuple(tasks),
                          tuple(faults), autoscale, rounds)


def load_scenario(path: str | Path, seed: int | None = None) -> ScenarioConfig:
    """Parse and validate a JSON scenario; ``seed`` overrides the file's seed."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    if seed is not None and isinstance(data, dict):
        data["seed"] = seed
    return config_from_dict(data)

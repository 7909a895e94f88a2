"""Command-line front end.

Exit codes: 0 success, 1 scenario validation failure, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng as streams
from .gossip import GossipParams, analytic_coverage, expected_total_messages, propagate, trace_rows
from .matching import NoMatch, capability_scores, embed_card, match_pipeline, overlap_scorer
from .report import emit_report, recompute_summary, summary_text
from .scenario import ScenarioError, load_scenario
from .simulation import MetricsReport, Simulation, run_simulation
from .topology import generate_graph, is_connected
from .trust import diffuse_until, init_trust

log = logging.getLogger("agentfabric")


def _trial_dir(out: Path, trial: int, trials: int) -> Path:
    return out if trials == 1 else out / f"trial_{trial:03d}"


def cmd_run(args, gossip_enabled: bool = True) -> int:
    cfg = load_scenario(args.scenario, args.seed)
    for trial in range(args.trials):
        report = run_simulation(cfg, trial, gossip_enabled)
        paths = emit_report(report, _trial_dir(Path(args.out), trial, args.trials), balances=args.balances)
        print(f"trial {trial}: wrote {len(paths)} files to {paths[0].parent}")
        sys.stdout.write(summary_text(report.summary))
    return 0


def cmd_lifecycle(args) -> int:
    return cmd_run(args, gossip_enabled=False)


def cmd_gossip(args) -> int:
    cfg = load_scenario(args.scenario, args.seed)
    g = cfg.graph
    graph_seed = int(streams.stream(cfg.seed, 0, streams.GRAPH).integers(2**63))
    graph = generate_graph(g.n, g.mean_degree, g.kind, graph_seed, g.rewire_probability)
    params = GossipParams(cfg.gossip.forward_probability, cfg.gossip.ttl)
    rows, sent, predicted = [], 0, 0.0
    traces = []
    for trial in range(args.trials):
        r = streams.stream(cfg.seed, trial, streams.GOSSIP)
        _, trace = propagate(graph, {args.source}, params, r, stop_on_saturation=False)
        rows += trace_rows(trial, trace)
        traces.append([t.informed for t in trace])
        sent += sum(t.messages for t in trace)
        predicted += expected_total_messages(1, params.forward_probability, graph.mean_degree,
                                             traces[-1], params.ttl)
    mean = np.mean(np.array(traces, dtype=float), axis=0)
    report = MetricsReport(gossip=rows)
    report.summary = {
        "trials": args.trials,
        "graph_connected": is_connected(graph),
        "graph_mean_degree": graph.mean_degree,
        "mean_final_coverage": float(mean[-1]),
        "analytic_final_coverage": analytic_coverage(graph.node_count, graph.mean_degree,
                                                     params.forward_probability, params.ttl),
        "messages_per_trial": sent / args.trials,
        "messages_predicted_per_trial": predicted / args.trials,
    }
    emit_report(report, args.out, families={"gossip"})
    sys.stdout.write(summary_text(report.summary))
    return 0


def cmd_trust(args) -> int:
    cfg = load_scenario(args.scenario, args.seed)
    sim = Simulation(cfg, 0)
    traj: list = []
    field, iters = diffuse_until(init_trust(sim.store.cards.values(), cfg.trust.init, cfg.trust.learning_rate),
                                 sim.graph, args.tolerance, args.max_iterations, traj)
    report = MetricsReport(trust=traj)
    report.summary = {"iterations": iters, "final_spread": float(field.scores.max() - field.scores.min()),
                      "total_trust": float(field.scores.sum())}
    emit_report(report, args.out, families={"trust"})
    sys.stdout.write(summary_text(report.summary))
    return 0


def cmd_match(args) -> int:
    cfg = load_scenario(args.scenario, args.seed)
    m = cfg.matching
    sim = Simulation(cfg, 0)
    cards = [sim.store[i] for i in sorted(sim.store.cards)]
    population = [(c, embed_card(c, m.dimension)) for c in cards]
    caps = sim.capabilities([c.id for c in cards], 0)
    rows, counts = [], {}
    for t in cfg.tasks:
        for sub in t.dag.nodes:
            req = replace(t.request, id=sub.id, requirement_tags=sub.tags)
            try:
                res = match_pipeline(population, req, overlap_scorer, m.thresholds, m.weights, sim.trust, caps,
                                     m.dimension, capability_score=capability_scores(caps))
                rows += res.rows
                counts[sub.id] = res.counts
            except NoMatch as exc:
                counts[sub.id] = {**exc.counts, "no_match": exc.stage}
    report = MetricsReport(matching=rows)
    report.summary = {k: v for k, v in counts.items()}
    emit_report(report, args.out, families={"matching"})
    sys.stdout.write(summary_text(report.summary))
    return 0


def cmd_report(args) -> int:
    sys.stdout.write(summary_text(recompute_summary(args.out)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agentfabric", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, type=Path)
            sp.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
            sp.add_argument("--trials", type=int, default=1)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--format", choices=["csv"], default="csv")

    for name, fn, help_ in (("run", cmd_run, "full coordination loop"),
                            ("lifecycle", cmd_lifecycle, "task lifecycle with every agent informed (no gossip)")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--balances", action="store_true", help="also write per-round balance snapshots")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("gossip", help="Monte Carlo gossip traces vs analytic expectations")
    common(sp)
    sp.add_argument("--source", type=int, default=0)
    sp.set_defaults(func=cmd_gossip)

    sp = sub.add_parser("trust", help="diffuse the initial trust field to convergence")
    common(sp)
    sp.add_argument("--tolerance", type=float, default=1e-9)
    sp.add_argument("--max-iterations", type=int, default=10_000)
    sp.set_defaults(func=cmd_trust)

    sp = sub.add_parser("match", help="run the matching pipeline for every scenario subtask")
    common(sp)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("report", help="recompute the summary from an output directory")
    common(sp, scenario=False)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", 1) < 1:
        print("error: --trials must be positive", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # structured diagnostic for any module failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

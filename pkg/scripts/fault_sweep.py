"""Task success fraction and settlement latency as worker failure probability rises.

Runs the bundled basic scenario with every default worker's success
probability overridden, averaging over trials.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from agentfabric.scenario import config_from_dict
from agentfabric.simulation import run_simulation

DEFAULT = Path(__file__).resolve().parents[1] / "scenarios" / "basic.json"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", type=Path, default=DEFAULT)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--levels", type=float, nargs="+", default=[1.0, 0.9, 0.7, 0.5, 0.3, 0.1, 0.0])
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.ERROR)  # all-failed runs retain the orchestrator pool

    base = json.loads(args.scenario.read_text())
    print(f"{'success_p':>9} {'settled':>8} {'latency':>8} {'messages':>9}")
    for level in args.levels:
        data = json.loads(json.dumps(base))
        data["population"].setdefault("behavior", {})["success_probability"] = level
        cfg = config_from_dict(data)
        reps = [run_simulation(cfg, k).summary for k in range(args.trials)]
        print(f"{level:>9.2f} {np.mean([r['task_success_fraction'] for r in reps]):>8.3f} "
              f"{np.mean([r['mean_settlement_latency'] for r in reps]):>8.2f} "
              f"{np.mean([r['gossip_messages'] for r in reps]):>9.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Iterations for ring trust diffusion to reach a target spread, against the spectral-gap estimate.

The slowest mode of the ring Laplacian decays by ``1 - eta*lambda_2`` per
step with ``lambda_2 = 2 - 2 cos(2 pi / n)``.
"""
import argparse
import math
import sys

import numpy as np

from agentfabric.topology import generate_graph
from agentfabric.trust import TrustField, diffuse_step


def iterations_to(spread: float, f: TrustField, g, cap: int) -> int | None:
    for it in range(1, cap + 1):
        f = diffuse_step(f, g)
        if np.ptp(f.scores) < spread:
            return it
    return None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--eta", type=float, default=0.1)
    ap.add_argument("--spread", type=float, default=1e-6)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--cap", type=int, default=100_000)
    args = ap.parse_args(argv)

    print(f"{'n':>4} {'lambda_2':>10} {'predicted':>10} {'observed (per seed)'}")
    for n in args.sizes:
        g = generate_graph(n, 2, "ring", 0)
        lam2 = 2 - 2 * math.cos(2 * math.pi / n)
        observed, predicted = [], []
        for seed in range(args.seeds):
            start = np.random.default_rng(seed).random(n)
            # amplitude of the slowest Fourier mode sets the asymptotic spread
            amp = 2 * abs(np.fft.fft(start - start.mean())[1]) / n
            predicted.append(math.log(2 * amp / args.spread) / -math.log(1 - args.eta * lam2))
            observed.append(iterations_to(args.spread, TrustField(start, args.eta), g, args.cap))
        print(f"{n:>4} {lam2:>10.5f} {np.mean(predicted):>10.0f} {observed}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

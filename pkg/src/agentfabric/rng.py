"""Counter-based random stream splitting.

Each stream is keyed by ``(master_seed, trial, stream, *extra)`` through
:class:`numpy.random.SeedSequence` spawn keys, so adding trials or new
consumers never shifts the draws of existing ones.
"""
from __future__ import annotations

import numpy as np

GRAPH = 0
POPULATION = 1
GOSSIP = 2
TRUST = 3
EXECUTION = 4
MATCHING = 5

_U64 = (1 << 64) - 1


def stream(master_seed: int, trial: int, kind: int, *extra: int) -> np.random.Generator:
    """Independent generator for one (trial, consumer, item) coordinate."""
    if master_seed < 0 or master_seed > _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {master_seed}")
    key = (int(trial), int(kind), *(int(e) for e in extra))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))

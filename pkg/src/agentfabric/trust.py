"""Local trust scores diffused by neighbor averaging.

One step applies ``T_i <- T_i + eta * sum_{j in N(i)} (T_j - T_i)`` to every
node at once from the pre-step snapshot. On an undirected graph the total
trust is conserved; for ``0 < eta < 1/d_max`` the field contracts to the mean
on each connected component.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .topology import Graph

TRAJECTORY_HEADER = ("iteration", "node", "score")
COLD_START_PRIOR = 0.5


class TrustDivergenceError(RuntimeError):
    def __init__(self, learning_rate: float, iteration: int):
        super().__init__(
            f"trust diffusion diverged at iteration {iteration} with learning rate {learning_rate}; "
            "use eta < 1/max_degree")
        self.learning_rate = learning_rate
        self.iteration = iteration


@dataclass(frozen=True)
class TrustField:
    scores: np.ndarray
    learning_rate: float
    iteration: int = 0

    def __getitem__(self, i: int) -> float:
        return float(self.scores[i])

    def __len__(self) -> int:
        return len(self.scores)

    def with_scores(self, updates: dict[int, float]) -> "TrustField":
        scores = self.scores.copy()
        for i, v in updates.items():
            scores[i] = v
        return TrustField(scores, self.learning_rate, self.iteration)


def init_trust(cards: Iterable, mode: str = "from_reputation", learning_rate: float = 0.05) -> TrustField:
    """Initial field indexed by card position.

    ``from_reputation`` takes each card's composite reputation, which falls
    back to the 0.5 prior for agents without ratings.
    """
    from .reputation import composite_reputation

    cards = list(cards)
    if not cards:
        raise ValueError("cannot initialise trust for an empty population")
    if mode == "uniform_prior":
        scores = np.full(len(cards), COLD_START_PRIOR)
    elif mode == "from_reputation":
        scores = np.array([composite_reputation(c.reputation) for c in cards], dtype=float)
    else:
        raise ValueError(f"unknown trust init mode {mode!r}")
    return TrustField(scores, learning_rate)


def check_stability(field: TrustField, g: Graph) -> bool:
    dmax = g.max_degree
    stable = dmax == 0 or field.learning_rate < 1.0 / dmax
    if not stable:
        warnings.warn(f"learning rate {field.learning_rate} >= 1/max_degree = {1.0 / dmax:.4g}; "
                      "diffusion may oscillate", RuntimeWarning, stacklevel=3)
    return stable


def diffuse_step(field: TrustField, g: Graph) -> TrustField:
    if len(field.scores) != g.node_count:
        raise ValueError(f"trust field has {len(field.scores)} nodes, graph has {g.node_count}")
    src, dst = g.arcs
    t = field.scores
    flow = np.bincount(src, weights=t[dst] - t[src], minlength=g.node_count)
    return TrustField(t + field.learning_rate * flow, field.learning_rate, field.iteration + 1)


def diffuse_until(field: TrustField, g: Graph, tolerance: float = 1e-9,
                  max_iterations: int = 10_000, trajectory: list | None = None
                  ) -> tuple[TrustField, int]:
    """Iterate until the largest per-node change drops below ``tolerance``.

    Raises :class:`TrustDivergenceError` once any score leaves ten times the
    initial scale (the larger of the initial spread and magnitude).
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    check_stability(field, g)
    t0 = field.scores
    scale = max(float(t0.max() - t0.min()), float(np.abs(t0).max()), np.finfo(float).tiny)
    limit = 10.0 * scale
    if trajectory is not None:
        trajectory.extend(trajectory_rows(field))
    iterations = 0
    while iterations < max_iterations:
        if float(field.scores.max() - field.scores.min()) == 0.0:
            break
        new = diffuse_step(field, g)
        iterations += 1
        if trajectory is not None:
            trajectory.extend(trajectory_rows(new))
        if not np.all(np.isfinite(new.scores)) or np.abs(new.scores).max() > limit:
            raise TrustDivergenceError(field.learning_rate, iterations)
        delta = float(np.abs(new.scores - field.scores).max())
        field = new
        if delta < tolerance:
            break
    return field, iterations


def total_trust(field: TrustField) -> float:
    return float(field.scores.sum())


def trajectory_rows(field: TrustField) -> list[tuple]:
    return [(field.iteration, i, float(s)) for i, s in enumerate(field.scores)]

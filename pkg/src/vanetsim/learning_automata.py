"""Variable-structure learning automaton with the linear reward-penalty update,
and the offline learning phase that turns street densities into edge costs."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .street_graph import StreetGraph

log = logging.getLogger(__name__)

REWARD = 0
PENALTY = 1


@dataclass
class LearningAutomaton:
    """Action-probability vector over r actions plus the reward/penalty steps."""

    r: int
    a: float = 0.1
    b: float = 0.1
    p: list[float] = field(default_factory=list)
    n: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("an automaton needs at least one action")
        if not (0 <= self.a < 1 and 0 <= self.b < 1):
            raise ValueError(f"reward/penalty steps must lie in [0, 1), got a={self.a} b={self.b}")
        if not self.p:
            self.p = [1.0 / self.r] * self.r
        elif len(self.p) != self.r:
            raise ValueError(f"probability vector has {len(self.p)} entries, expected {self.r}")

    def _check(self, i: int) -> None:
        if not 0 <= i < self.r:
            raise IndexError(f"action {i} out of range 0..{self.r - 1}")

    def reward(self, i: int) -> "LearningAutomaton":
        self._check(i)
        a = self.a
        self.p = [pj + a * (1.0 - pj) if j == i else (1.0 - a) * pj for j, pj in enumerate(self.p)]
        self.n += 1
        return self

    def penalize(self, i: int) -> "LearningAutomaton":
        self._check(i)
        if self.r < 2:
            raise ValueError("penalty update is undefined for a single-action automaton")
        b = self.b
        share = b / (self.r - 1)
        self.p = [(1.0 - b) * pj if j == i else share + (1.0 - b) * pj for j, pj in enumerate(self.p)]
        self.n += 1
        return self

    def update(self, i: int, beta: int) -> "LearningAutomaton":
        if beta == REWARD:
            return self.reward(i)
        if beta == PENALTY:
            return self.penalize(i)
        raise ValueError(f"reinforcement signal must be 0 or 1, got {beta}")

    def select_action(self, rng: random.Random) -> int:
        """Inverse-CDF draw over ascending action index."""
        u = rng.random()
        acc = 0.0
        for i, pi in enumerate(self.p):
            acc += pi
            if u < acc:
                return i
        # Rounding can leave acc slightly below 1; fall back to the last action with mass.
        for i in range(self.r - 1, -1, -1):
            if self.p[i] > 0:
                return i
        return self.r - 1


def required_min(street_length: float, tx_range: float) -> int:
    """Worst-case vehicle count needed to relay along a street of the given length.

    One vehicle near each end plus floor(length / range) relays in between.
    """
    if street_length <= 0 or tx_range <= 0:
        raise ValueError("street length and transmission range must be positive")
    return math.floor(street_length / tx_range) + 2


def compute_beta(n_vehicles: int, min_required: int) -> int:
    return REWARD if n_vehicles >= min_required else PENALTY


def street_cost(p_final: float, r: int) -> float:
    """r - p_final / p(0) with p(0) = 1/r, i.e. r * (1 - p_final)."""
    return r - p_final / (1.0 / r)


@dataclass
class CostMatrix:
    cost: list[float]
    p_final: list[float]

    def __post_init__(self):
        r = len(self.cost)
        if r != len(self.p_final):
            raise ValueError("cost and probability vectors differ in length")
        for c in self.cost:
            if not (-1e-9 <= c <= r + 1e-9):
                raise ValueError(f"cost {c} outside [0, {r}]")

    @classmethod
    def from_probabilities(cls, p: Sequence[float]) -> "CostMatrix":
        r = len(p)
        return cls([min(float(r), max(0.0, street_cost(pi, r))) for pi in p], list(p))

    @classmethod
    def uniform(cls, r: int) -> "CostMatrix":
        return cls.from_probabilities([1.0 / r] * r)

    def __len__(self) -> int:
        return len(self.cost)


@dataclass
class TrafficDatabase:
    """Learned cost matrices keyed by time-bucket label."""

    buckets: dict[str, CostMatrix] = field(default_factory=dict)

    def add(self, label: str, costs: CostMatrix) -> None:
        if label in self.buckets:
            raise ValueError(f"duplicate bucket label {label!r}")
        self.buckets[label] = costs

    def get(self, label: str | None = None) -> CostMatrix:
        if not self.buckets:
            raise KeyError("traffic database is empty")
        if label is None:
            return next(iter(self.buckets.values()))
        try:
            return self.buckets[label]
        except KeyError:
            raise KeyError(f"no bucket {label!r}; available: {', '.join(self.buckets)}") from None


def run_learning_phase(
    graph: StreetGraph,
    density: Callable[[int], int],
    iterations: int,
    a: float,
    b: float,
    rng: random.Random,
    tx_range: float = 500.0,
    sweep: bool = True,
    on_step: Callable[[], None] | None = None,
) -> CostMatrix:
    """Learn per-street costs from vehicle counts.

    ``density(street_id)`` answers the current vehicle count on a street.
    ``on_step`` is called after every update so a caller can advance time.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    la = LearningAutomaton(graph.num_streets, a, b)
    mins = [required_min(s.length, tx_range) for s in graph.streets]

    def evaluate(i: int) -> None:
        try:
            n = density(i)
        except Exception as exc:
            raise RuntimeError(f"density query failed for street {i}: {exc}") from exc
        la.update(i, compute_beta(n, mins[i]))
        if on_step is not None:
            on_step()

    if sweep:
        for i in range(la.r):
            evaluate(i)
    for _ in range(iterations):
        evaluate(la.select_action(rng))
    log.debug("learning phase finished after %d updates", la.n)
    return CostMatrix.from_probabilities(la.p)

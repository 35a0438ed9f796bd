"""Cache-aware hybrid request scheduler and FCFS/SJF baselines.

A shadow price ``lam`` measures KV-cache pressure: the ratio of new block
demand in the queue to the usable free capacity is pushed through a logistic
curve. A small price makes the score behave like shortest-job-first on prompt
length; a large one penalises new block allocation and rewards cache hits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence


@dataclass
class SchedulerParams:
    lambda_max: float = 2.0
    k: float = 4.0
    epsilon: float = 1.0
    a: float = 1.0
    b: float = 0.5
    c: float = 0.05
    tpb: int = 16
    # optional PI correction on top of the sigmoid price; off by default
    k_p: float = 0.0
    k_i: float = 0.0
    pi_enabled: bool = False

    def __post_init__(self) -> None:
        if self.lambda_max <= 0 or self.k <= 0 or self.epsilon <= 0:
            raise ValueError("lambda_max, k and epsilon must be positive")
        if self.tpb < 1:
            raise ValueError("tpb must be >= 1")
        if min(self.a, self.b, self.c) < 0:
            raise ValueError("score weights a, b, c must be non-negative")


@dataclass
class SchedulerState:
    lam: float = 0.0
    integral: float = 0.0
    last_demand: int = 0
    last_capacity: int = 0


@dataclass
class QueueEntry:
    request_id: str
    prompt_tok: int
    hit: int
    need: int
    wait: float
    arrival: int


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def update_lambda(
    state: SchedulerState,
    queue: Sequence[QueueEntry],
    free_blocks: int,
    params: SchedulerParams,
) -> float:
    """Recompute the shadow price from the queue's hit/need footprints."""
    hit_total = sum(e.hit for e in queue)
    usable = max(0, free_blocks - hit_total)
    demand = sum(e.need for e in queue)
    z = demand / (usable + params.epsilon)
    lam = params.lambda_max * sigmoid(params.k * (z - 1.0))
    if params.pi_enabled:
        gap = demand - usable
        state.integral += gap
        lam += params.k_p * gap + params.k_i * state.integral
        lam = min(max(lam, 0.0), params.lambda_max)
    state.lam = lam
    state.last_demand, state.last_capacity = demand, usable
    return lam


def score(entry: QueueEntry, lam: float, params: SchedulerParams) -> float:
    need_tok = entry.prompt_tok / params.tpb
    sjf_mix = min(max(1.0 - lam / params.lambda_max, 0.0), 1.0)
    need_eff = sjf_mix * need_tok + (1.0 - sjf_mix) * entry.need
    return params.a * entry.hit - (params.b + lam) * need_eff + params.c * entry.wait


def rank_agentsched(queue: Sequence[QueueEntry], lam: float, params: SchedulerParams) -> list[QueueEntry]:
    return sorted(queue, key=lambda e: (-score(e, lam, params), e.arrival))


def rank_fcfs(queue: Sequence[QueueEntry]) -> list[QueueEntry]:
    return sorted(queue, key=lambda e: e.arrival)


def rank_sjf(queue: Sequence[QueueEntry]) -> list[QueueEntry]:
    return sorted(queue, key=lambda e: (e.prompt_tok, e.arrival))


def first_feasible(candidates: Sequence[QueueEntry], feasible: Callable[[QueueEntry], bool]) -> str | None:
    for e in candidates:
        if feasible(e):
            return e.request_id
    return None


def select(
    queue: Sequence[QueueEntry],
    state: SchedulerState,
    params: SchedulerParams,
    feasible: Callable[[QueueEntry], bool] = lambda e: True,
) -> str | None:
    """Highest-scoring feasible request under the current shadow price."""
    if not queue:
        return None
    return first_feasible(rank_agentsched(queue, state.lam, params), feasible)


def baseline_fcfs(queue: Sequence[QueueEntry], feasible: Callable[[QueueEntry], bool] = lambda e: True) -> str | None:
    return first_feasible(rank_fcfs(queue), feasible)


def baseline_sjf(queue: Sequence[QueueEntry], feasible: Callable[[QueueEntry], bool] = lambda e: True) -> str | None:
    return first_feasible(rank_sjf(queue), feasible)


POLICIES = ("fcfs", "sjf", "agentsched")


@dataclass
class Scheduler:
    """Policy wrapper used by the serving engine."""

    policy: str = "agentsched"
    params: SchedulerParams = field(default_factory=SchedulerParams)
    state: SchedulerState = field(default_factory=SchedulerState)

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown scheduling policy {self.policy!r}")

    def refresh(self, queue: Sequence[QueueEntry], free_blocks: int) -> float:
        # the price is tracked for every policy so traces are comparable
        return update_lambda(self.state, queue, free_blocks, self.params)

    def pick(self, queue: Sequence[QueueEntry], feasible: Callable[[QueueEntry], bool]) -> str | None:
        if self.policy == "fcfs":
            return baseline_fcfs(queue, feasible)
        if self.policy == "sjf":
            return baseline_sjf(queue, feasible)
        return select(queue, self.state, self.params, feasible)

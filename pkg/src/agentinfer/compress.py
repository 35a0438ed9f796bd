"""Partitioned agent memory with search filtering and asynchronous distillation.

Agent context is split into reasoning memory (think/act steps, never
touched) and environment memory (tool results). Once the context grows past
``theta_ctx`` at a loop boundary, a distillation job summarises the
environment entries present at that moment. The agent keeps working on the
uncompressed memory; the summary is swapped in at a later loop boundary,
placed right after the last step it covers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol, Sequence

THINK = "think"
ACT = "act"
TOOL = "tool"
SUMMARY = "summary"

REASONING_KINDS = frozenset({THINK, ACT})
ENVIRONMENT_KINDS = frozenset({TOOL, SUMMARY})


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class MemoryEntry:
    """One context entry. ``SUMMARY`` entries are think-formatted distilled tool output."""

    kind: str
    tokens: tuple[int, ...]
    loop: int
    seq: int

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


class AgentMemory:
    def __init__(self) -> None:
        self.entries: list[MemoryEntry] = []
        self.reasoning_tokens = 0
        self.environment_tokens = 0
        self._seq = 0
        self.loop = 0
        self.version = 0

    def _add(self, kind: str, tokens: Sequence[int]) -> MemoryEntry:
        e = MemoryEntry(kind, tuple(tokens), self.loop, self._seq)
        self._seq += 1
        self.entries.append(e)
        if kind in REASONING_KINDS:
            self.reasoning_tokens += e.n_tokens
        else:
            self.environment_tokens += e.n_tokens
        return e

    def add_think(self, tokens: Sequence[int]) -> MemoryEntry:
        return self._add(THINK, tokens)

    def add_act(self, tokens: Sequence[int]) -> MemoryEntry:
        return self._add(ACT, tokens)

    def add_tool(self, tokens: Sequence[int]) -> MemoryEntry:
        return self._add(TOOL, tokens)

    def end_loop(self) -> None:
        self.loop += 1

    @property
    def total_tokens(self) -> int:
        return self.reasoning_tokens + self.environment_tokens

    def reasoning(self) -> list[MemoryEntry]:
        return [e for e in self.entries if e.kind in REASONING_KINDS]

    def environment(self) -> list[MemoryEntry]:
        return [e for e in self.entries if e.kind in ENVIRONMENT_KINDS]

    def tokens(self) -> list[int]:
        out: list[int] = []
        for e in self.entries:
            out.extend(e.tokens)
        return out

    def check(self) -> None:
        assert self.reasoning_tokens == sum(e.n_tokens for e in self.reasoning())
        assert self.environment_tokens == sum(e.n_tokens for e in self.environment())


# -- search filtering ---------------------------------------------------------


@dataclass
class SearchResult:
    url: str
    title: tuple[int, ...]
    snippet: tuple[int, ...]
    relevance: float | None = None
    content_tokens: int = 0


Ranker = Callable[[Sequence[int], SearchResult], float]


def overlap_ranker(query: Sequence[int], result: SearchResult) -> float:
    """Share of distinct query tokens present in the result's title and snippet."""
    q = set(query)
    if not q:
        return 0.0
    text = set(result.title) | set(result.snippet)
    return len(q & text) / len(q)


@dataclass
class CompressConfig:
    theta_ctx: int = 5000
    theta_search: float = 0.3
    ratio: float = 0.5
    distill_latency: float = 20.0

    def __post_init__(self) -> None:
        if self.theta_ctx <= 0:
            raise ValueError("theta_ctx must be positive")
        if not 0.0 <= self.theta_search <= 1.0:
            raise ValueError("theta_search must lie in [0, 1]")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must lie in (0, 1]")


def rank_filter(
    results: Sequence[SearchResult],
    query: Sequence[int],
    ranker: Ranker,
    cfg: CompressConfig,
) -> list[SearchResult]:
    """Score every result, keep those at or above ``theta_search``, best first."""
    for r in results:
        r.relevance = ranker(query, r)
    kept = [r for r in results if r.relevance >= cfg.theta_search]
    kept.sort(key=lambda r: -r.relevance)  # stable for equal relevance
    return kept


# -- asynchronous distillation -----------------------------------------------


class JobStatus(Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


@dataclass
class DistillJob:
    snapshot: tuple[MemoryEntry, ...]
    submit_time: float
    status: JobStatus = JobStatus.PENDING
    summary: tuple[int, ...] | None = None
    error: str | None = None

    @property
    def loops(self) -> tuple[int, int]:
        return (min(e.loop for e in self.snapshot), max(e.loop for e in self.snapshot))

    @property
    def snapshot_tokens(self) -> int:
        return sum(e.n_tokens for e in self.snapshot)


class Distiller(Protocol):
    def __call__(self, snapshot: Sequence[MemoryEntry], cfg: CompressConfig) -> Sequence[int]: ...


def stub_distiller(snapshot: Sequence[MemoryEntry], cfg: CompressConfig) -> list[int]:
    """Deterministic stand-in: keep an evenly spaced ``ratio`` share of the tokens."""
    tokens = [t for e in snapshot for t in e.tokens]
    n = math.ceil(cfg.ratio * len(tokens))
    if n == 0:
        return []
    step = len(tokens) / n
    return [tokens[int(i * step)] for i in range(n)]


class CompressionSession:
    """Single-flight job bookkeeping for one agent's memory."""

    def __init__(self, memory: AgentMemory, cfg: CompressConfig, distiller: Distiller = stub_distiller) -> None:
        self.memory = memory
        self.cfg = cfg
        self.distiller = distiller
        self.job: DistillJob | None = None
        self.applied: list[DistillJob] = []

    @property
    def in_flight(self) -> bool:
        return self.job is not None and self.job.status is JobStatus.PENDING

    def should_compress(self, loop_completed: bool) -> bool:
        return should_compress(self.memory, loop_completed, self.cfg, self.job)

    def submit(self, now: float = 0.0) -> DistillJob:
        if self.job is not None and self.job.status is not JobStatus.FAILED:
            raise ContractViolation("a distillation job is already outstanding")
        self.job = submit_distill(self.memory, self.cfg, now)
        return self.job

    def run(self) -> DistillJob:
        """Execute the outstanding job's distiller (off the agent's critical path)."""
        if self.job is None:
            raise ContractViolation("no job to run")
        return run_distill(self.job, self.distiller, self.cfg)

    def apply(self, at_boundary: bool = True) -> MemoryEntry | None:
        if self.job is None:
            raise ContractViolation("no job to apply")
        if self.job.status is JobStatus.FAILED:
            self.job = None
            return None
        entry = apply_distill(self.memory, self.job, at_boundary)
        self.applied.append(self.job)
        self.job = None
        return entry


def should_compress(
    memory: AgentMemory,
    loop_completed: bool,
    cfg: CompressConfig,
    job: DistillJob | None = None,
) -> bool:
    busy = job is not None and job.status is JobStatus.PENDING
    return memory.total_tokens > cfg.theta_ctx and loop_completed and not busy


def submit_distill(memory: AgentMemory, cfg: CompressConfig, now: float = 0.0) -> DistillJob:
    """Fix the snapshot: every environment entry of loops completed so far."""
    snap = tuple(e for e in memory.environment() if e.loop < memory.loop)
    if not snap:
        raise ContractViolation("nothing to distill")
    return DistillJob(snap, now)


def run_distill(job: DistillJob, distiller: Distiller, cfg: CompressConfig) -> DistillJob:
    if job.status is not JobStatus.PENDING:
        raise ContractViolation(f"job already {job.status.value}")
    try:
        job.summary = tuple(distiller(job.snapshot, cfg))
        job.status = JobStatus.DONE
    except Exception as exc:  # distiller is pluggable; any failure leaves memory untouched
        job.status = JobStatus.FAILED
        job.error = repr(exc)
    return job


def apply_distill(memory: AgentMemory, job: DistillJob, at_boundary: bool = True) -> MemoryEntry:
    """Swap the snapshot's entries for the summary, in place after the last one.

    Reasoning entries and environment entries newer than the snapshot are
    kept as they are.
    """
    if job.status is not JobStatus.DONE:
        raise ContractViolation(f"cannot apply a {job.status.value} job")
    if not at_boundary:
        raise ContractViolation("summaries may only be applied between loops")
    covered = {e.seq for e in job.snapshot}
    present = {e.seq for e in memory.entries}
    if not covered <= present:
        raise ContractViolation("snapshot entries are no longer in memory")
    last_seq = max(covered)
    summary = MemoryEntry(SUMMARY, job.summary, job.snapshot[-1].loop, memory._seq)
    memory._seq += 1
    new_entries = []
    for e in memory.entries:
        if e.seq in covered:
            if e.seq == last_seq:
                new_entries.append(summary)
            continue
        new_entries.append(e)
    memory.entries = new_entries
    memory.environment_tokens += summary.n_tokens - job.snapshot_tokens
    memory.version += 1
    return summary

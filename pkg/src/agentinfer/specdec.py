"""Lossless speculative decoding driven by suffix-automaton drafts.

One decoding step drafts ``n_propose - 1`` tokens from a
:class:`~agentinfer.sam.CompositeDraftSource`, asks the target model for its
greedy continuation in a single forward pass, commits the longest agreeing
prefix plus the model's own next token, and indexes the committed tokens.
The output is therefore identical to plain greedy decoding.
"""

from __future__ import annotations

import collections
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

from .sam import CompositeDraftSource, SamCapacityError, SuffixAutomaton

logger = logging.getLogger(__name__)


class TokenOracle(Protocol):
    """Deterministic greedy model: identical context gives identical continuation."""

    def next_tokens(self, context: Sequence[int], n: int) -> list[int]: ...


@dataclass
class SpecConfig:
    n_propose: int = 4
    top_k: int = 3
    max_context_len: int = 32_000
    max_batch_size: int = 8
    min_match: int = 2
    session_weight: float = 1.0
    max_states: int | None = None

    def __post_init__(self) -> None:
        if self.n_propose < 2:
            raise ValueError("n_propose must be >= 2 when speculation is enabled")
        if self.max_context_len <= 0 or self.max_batch_size <= 0:
            raise ValueError("adaptive thresholds must be positive")
        if self.top_k < 0 or self.min_match < 1:
            raise ValueError("top_k must be >= 0 and min_match >= 1")


@dataclass
class DecodeMetrics:
    generated_tokens: int = 0
    forward_passes: int = 0
    proposed_spec_tokens: int = 0
    accepted_spec_tokens: int = 0
    nonempty_proposal_steps: int = 0

    def merge(self, other: DecodeMetrics) -> DecodeMetrics:
        return DecodeMetrics(
            self.generated_tokens + other.generated_tokens,
            self.forward_passes + other.forward_passes,
            self.proposed_spec_tokens + other.proposed_spec_tokens,
            self.accepted_spec_tokens + other.accepted_spec_tokens,
            self.nonempty_proposal_steps + other.nonempty_proposal_steps,
        )


def ote(metrics: DecodeMetrics) -> float:
    """Overall token efficiency: generated tokens per model forward pass."""
    if metrics.forward_passes == 0:
        raise ZeroDivisionError("OTE is undefined before any forward pass")
    return metrics.generated_tokens / metrics.forward_passes


def shr(metrics: DecodeMetrics) -> tuple[float, bool]:
    """Speculative hit rate over steps that actually proposed something.

    Returns ``(rate, defined)``; ``defined`` is False (and rate 0.0) when no
    step ever issued a non-empty proposal.
    """
    if metrics.proposed_spec_tokens == 0:
        return 0.0, False
    return metrics.accepted_spec_tokens / metrics.proposed_spec_tokens, True


# -- cross-session memory ----------------------------------------------------


@dataclass(frozen=True)
class MemoryEntry:
    query: tuple[int, ...]
    response: tuple[int, ...]
    session_id: str
    index: int


@dataclass(frozen=True)
class RetrievalResult:
    entry: MemoryEntry
    similarity: float


class MemoryRepository:
    """Append-only store of past (query, response) pairs across sessions."""

    def __init__(self, capacity: int = 10_000) -> None:
        self.capacity = capacity
        self.entries: list[MemoryEntry] = []

    def add(self, query: Sequence[int], response: Sequence[int], session_id: str) -> MemoryEntry:
        if len(self.entries) >= self.capacity:
            raise OverflowError(f"memory repository full ({self.capacity} entries)")
        e = MemoryEntry(tuple(query), tuple(response), session_id, len(self.entries))
        self.entries.append(e)
        return e

    def __len__(self) -> int:
        return len(self.entries)


def bigrams(tokens: Sequence[int]) -> set[tuple[int, int]]:
    return set(zip(tokens, tokens[1:]))


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def retrieve_top_k(
    query: Sequence[int],
    repo: MemoryRepository,
    k: int,
    session_id: str | None = None,
) -> list[RetrievalResult]:
    """Top-``k`` stored entries by token-bigram Jaccard similarity of queries.

    Ties go to the older entry; entries of ``session_id`` are excluded.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    qb = bigrams(query)
    scored = [
        RetrievalResult(e, jaccard(qb, bigrams(e.query)))
        for e in repo.entries
        if session_id is None or e.session_id != session_id
    ]
    scored.sort(key=lambda r: (-r.similarity, r.entry.index))
    return scored[:k]


# cursors only need the recent past: a match longer than this is rare and
# would draft the same tokens anyway
SYNC_TAIL = 64


def build_member(entry: MemoryEntry, max_states: int | None = None) -> SuffixAutomaton:
    sam = SuffixAutomaton(max_states=max_states)
    sam.add_document(entry.query)
    sam.add_document(entry.response)
    return sam.freeze()


def build_composite(
    session_ctx: Sequence[int],
    prompt: Sequence[int],
    retrieved: Iterable[RetrievalResult],
    cfg: SpecConfig,
) -> CompositeDraftSource:
    """Session automaton over ``session_ctx`` + ``prompt`` plus one frozen member per hit."""
    session = SuffixAutomaton(max_states=cfg.max_states)
    if session_ctx:
        session.add_document(session_ctx)
    session.add_document(prompt)
    src = CompositeDraftSource(session, cfg.session_weight)
    for r in retrieved:
        src.add_frozen(build_member(r.entry, cfg.max_states), r.similarity)
    src.sync(prompt[-SYNC_TAIL:])
    return src


# -- decoding ----------------------------------------------------------------


def decode_step(
    oracle: TokenOracle,
    src: CompositeDraftSource,
    context: list[int],
    cfg: SpecConfig,
    metrics: DecodeMetrics,
    max_tokens: int | None = None,
) -> list[int]:
    """Run one draft-and-verify step; append committed tokens to ``context``.

    ``max_tokens`` caps how many tokens may be committed (the draft is
    trimmed so the step never overshoots a length limit).
    """
    k = cfg.n_propose - 1
    if max_tokens is not None:
        if max_tokens < 1:
            return []
        k = min(k, max_tokens - 1)
    draft: list[int] = []
    if k > 0:
        draft, _ = src.draft(k, cfg.min_match)
    target = oracle.next_tokens(context, len(draft) + 1)
    n_ok = 0
    while n_ok < len(draft) and draft[n_ok] == target[n_ok]:
        n_ok += 1
    accepted = target[: n_ok + 1]

    metrics.forward_passes += 1
    metrics.generated_tokens += len(accepted)
    if draft:
        metrics.proposed_spec_tokens += len(draft)
        metrics.accepted_spec_tokens += n_ok
        metrics.nonempty_proposal_steps += 1

    context.extend(accepted)
    src.insert_verified(accepted)
    return accepted


def greedy_step(oracle: TokenOracle, context: list[int], metrics: DecodeMetrics) -> list[int]:
    tok = oracle.next_tokens(context, 1)
    metrics.forward_passes += 1
    metrics.generated_tokens += 1
    context.extend(tok)
    return tok


@dataclass
class StopRule:
    """Stop after ``max_new_tokens`` or right after emitting a stop token."""

    max_new_tokens: int
    stop_tokens: frozenset[int] = frozenset()

    def cut(self, produced: list[int]) -> int | None:
        """Index just past the first stop token, if any."""
        for i, t in enumerate(produced):
            if t in self.stop_tokens:
                return i + 1
        return None


def run_decode(
    oracle: TokenOracle,
    src: CompositeDraftSource | None,
    prompt: Sequence[int],
    stop: StopRule,
    cfg: SpecConfig | None = None,
) -> tuple[list[int], DecodeMetrics]:
    """Decode until ``stop`` fires; speculative when ``src`` is given."""
    context = list(prompt)
    out: list[int] = []
    metrics = DecodeMetrics()
    while len(out) < stop.max_new_tokens:
        remaining = stop.max_new_tokens - len(out)
        if src is not None and cfg is not None:
            step = decode_step(oracle, src, context, cfg, metrics, max_tokens=remaining)
        else:
            step = greedy_step(oracle, context, metrics)
        cut = stop.cut(step)
        if cut is not None:
            # tokens past the stop token were never part of the greedy output
            extra = len(step) - cut
            metrics.generated_tokens -= extra
            out.extend(step[:cut])
            break
        out.extend(step)
    return out, metrics


def greedy_decode(oracle: TokenOracle, prompt: Sequence[int], stop: StopRule) -> list[int]:
    """Reference decoder: one oracle call per token."""
    context = list(prompt)
    out: list[int] = []
    while len(out) < stop.max_new_tokens:
        t = oracle.next_tokens(context, 1)[0]
        context.append(t)
        out.append(t)
        if t in stop.stop_tokens:
            break
    return out


def adaptive_enabled(context_len: int, batch_size: int, cfg: SpecConfig) -> bool:
    """Speculate only while both context length and batch size are within thresholds."""
    return context_len <= cfg.max_context_len and batch_size <= cfg.max_batch_size


# -- asynchronous construction ------------------------------------------------


class BuildStatus(Enum):
    PENDING = "pending"
    READY = "ready"
    FAILED = "failed"


@dataclass
class SamBuildHandle:
    request_id: str
    status: BuildStatus = BuildStatus.PENDING
    result: CompositeDraftSource | None = None
    error: str | None = None

    def _resolve(self, status: BuildStatus, result=None, error=None) -> None:
        if self.status is not BuildStatus.PENDING:
            raise RuntimeError(f"build handle {self.request_id} already {self.status.value}")
        self.status, self.result, self.error = status, result, error


@dataclass
class BuildJob:
    handle: SamBuildHandle
    build: Callable[[], CompositeDraftSource]
    tokens: int


class SamBuildQueue:
    """FIFO waiting queue consumed by a background builder.

    The queue itself is time-agnostic: :meth:`run_next` performs the next
    construction. A simulator decides *when* that happens (see
    ``agentinfer.sim.engine``); a threaded runtime would call it from a
    worker thread.
    """

    def __init__(self) -> None:
        self._queue: collections.deque[BuildJob] = collections.deque()
        self._ids = itertools.count()

    def enqueue(self, build: Callable[[], CompositeDraftSource], tokens: int, request_id: str | None = None) -> SamBuildHandle:
        rid = request_id if request_id is not None else f"build-{next(self._ids)}"
        handle = SamBuildHandle(rid)
        self._queue.append(BuildJob(handle, build, tokens))
        return handle

    def __len__(self) -> int:
        return len(self._queue)

    def peek(self) -> BuildJob | None:
        return self._queue[0] if self._queue else None

    def run_next(self) -> SamBuildHandle | None:
        if not self._queue:
            return None
        return self._execute(self._queue.popleft())

    def run_now(self, handle: SamBuildHandle) -> SamBuildHandle:
        """Run one queued job immediately, ahead of the FIFO order (synchronous builds)."""
        for i, job in enumerate(self._queue):
            if job.handle is handle:
                del self._queue[i]
                return self._execute(job)
        raise KeyError(f"no queued build for {handle.request_id}")

    def _execute(self, job: BuildJob) -> SamBuildHandle:
        try:
            job.handle._resolve(BuildStatus.READY, result=job.build())
        except SamCapacityError as exc:
            logger.info("SAM build for %s failed: %s", job.handle.request_id, exc)
            job.handle._resolve(BuildStatus.FAILED, error=str(exc))
        return job.handle


def enqueue_build(queue: SamBuildQueue, build: Callable[[], CompositeDraftSource], tokens: int, request_id: str | None = None) -> SamBuildHandle:
    return queue.enqueue(build, tokens, request_id)


def poll_build(handle: SamBuildHandle) -> BuildStatus:
    return handle.status

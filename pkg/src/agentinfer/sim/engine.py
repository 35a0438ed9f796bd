"""Iteration-level serving engine on a simpy clock.

Each iteration admits waiting requests (scheduler picks, block pool decides
feasibility), advances chunked prefill, and runs one decode step for every
sequence past prefill. Token content is produced by each request's oracle
at the start of the iteration; timestamps are taken when the iteration's
simulated duration has elapsed.

Draft sources for speculative decoding are built either on the engine's
critical path (``sync``) or by a background builder that drains a FIFO
queue (``async``); in the latter case a request decodes without drafts
until its handle is ready.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import simpy

from ..kvcache import BlockPool, ContractViolation, RequestFootprint, block_hashes
from ..sam import CompositeDraftSource, SuffixAutomaton
from ..sched import QueueEntry, Scheduler
from ..specdec import (
    SYNC_TAIL,
    BuildStatus,
    DecodeMetrics,
    MemoryRepository,
    SamBuildHandle,
    SamBuildQueue,
    SpecConfig,
    TokenOracle,
    adaptive_enabled,
    build_member,
    decode_step,
    greedy_step,
    retrieve_top_k,
)
from .latency import LatencyModel

logger = logging.getLogger(__name__)

NONE, SYNC, ASYNC = "none", "sync", "async"
BUILD_MODES = (NONE, SYNC, ASYNC)


@dataclass
class EngineConfig:
    max_batch: int = 8
    prefill_chunk: int = 8192
    total_blocks: int = 8192
    tokens_per_block: int = 16

    def __post_init__(self) -> None:
        if self.max_batch < 1 or self.prefill_chunk < 1:
            raise ValueError("max_batch and prefill_chunk must be >= 1")
        if self.total_blocks < 1:
            raise ValueError("total_blocks must be >= 1")
        if self.tokens_per_block < 1:
            raise ValueError("tokens_per_block must be >= 1")


@dataclass
class SpecSettings:
    build: str = NONE
    cfg: SpecConfig = field(default_factory=SpecConfig)
    use_memory: bool = True

    def __post_init__(self) -> None:
        if self.build not in BUILD_MODES:
            raise ValueError(f"build must be one of {BUILD_MODES}")

    @property
    def enabled(self) -> bool:
        return self.build != NONE


class DraftSession:
    """Live automaton kept across the requests of one agent session."""

    def __init__(self, cfg: SpecConfig) -> None:
        self.cfg = cfg
        self.automaton: SuffixAutomaton | None = None
        self.tokens: list[int] = []

    def pending_tokens(self, prompt: Sequence[int]) -> int:
        n = len(self.tokens)
        if self.automaton is not None and len(prompt) >= n and prompt[:n] == self.tokens:
            return len(prompt) - n
        return len(prompt)

    def catch_up(self, prompt: Sequence[int]) -> SuffixAutomaton:
        """Index ``prompt``; incremental when it extends what is already indexed."""
        n = len(self.tokens)
        if self.automaton is not None and len(prompt) >= n and prompt[:n] == self.tokens:
            self.automaton.extend_many(prompt[n:])
            self.tokens.extend(prompt[n:])
        else:
            # context was rewritten (e.g. compressed): start over
            self.automaton = SuffixAutomaton(max_states=self.cfg.max_states)
            self.automaton.extend_many(prompt)
            self.tokens = list(prompt)
        return self.automaton


@dataclass(eq=False)
class LLMRequest:
    request_id: str
    prompt: list[int]
    max_new_tokens: int
    oracle: TokenOracle
    klass: str = "short"
    session_id: str = ""
    query: tuple[int, ...] = ()
    hashes: list[int] | None = None
    draft_session: DraftSession | None = None
    remember: bool = False
    tag: str = ""

    arrival: float = 0.0
    admitted: float | None = None
    first_token: float | None = None
    finished: float | None = None
    seq: int = 0
    context: list[int] = field(default_factory=list)
    output: list[int] = field(default_factory=list)
    uncached: int = 0
    prefilled: int = 0
    hit: int = 0
    need: int = 0
    extra: int = 0
    metrics: DecodeMetrics = field(default_factory=DecodeMetrics)
    handle: SamBuildHandle | None = None
    src: CompositeDraftSource | None = None
    indexed: int = 0
    checked: bool = False
    first_pending: bool = False
    fp: RequestFootprint | None = None
    fp_version: int = -1
    done: simpy.Event | None = None

    @property
    def decoding(self) -> bool:
        return self.prefilled >= self.uncached


@dataclass
class RequestRecord:
    request_id: str
    klass: str
    tag: str
    arrival: float
    admitted: float
    first_token: float
    finished: float
    prompt_tok: int
    output_tok: int
    hit_blocks: int
    need_blocks: int
    metrics: DecodeMetrics

    @property
    def ttft(self) -> float:
        return self.first_token - self.arrival

    @property
    def e2e(self) -> float:
        return self.finished - self.arrival

    @property
    def tpot(self) -> float:
        return (self.e2e - self.ttft) / max(1, self.output_tok - 1)


@dataclass
class AdmissionEvent:
    time: float
    request_id: str
    klass: str
    lam: float


@dataclass
class Sample:
    time: float
    lam: float
    waiting: int
    running_long: int
    running_short: int
    free_blocks: int


class ServingEngine:
    def __init__(
        self,
        env: simpy.Environment,
        name: str,
        latency: LatencyModel,
        cfg: EngineConfig,
        scheduler: Scheduler,
        spec: SpecSettings | None = None,
        repo: MemoryRepository | None = None,
        classify: Callable[[int], str] | None = None,
    ) -> None:
        self.env = env
        self.name = name
        self.latency = latency
        self.cfg = cfg
        self.pool = BlockPool(cfg.total_blocks, cfg.tokens_per_block)
        self.scheduler = scheduler
        self.spec = spec or SpecSettings()
        self.repo = repo
        self.classify = classify
        self.waiting: list[LLMRequest] = []
        self.running: list[LLMRequest] = []
        self.records: list[RequestRecord] = []
        self.admissions: list[AdmissionEvent] = []
        self.samples: list[Sample] = []
        self.busy_time = 0.0
        self.iterations = 0
        self.build_queue = SamBuildQueue()
        self._members: dict[int, SuffixAutomaton] = {}
        self._seq = itertools.count()
        self._wake: simpy.Event = env.event()
        self._build_wake: simpy.Event = env.event()
        self.process = env.process(self._loop())
        env.process(self._builder())

    # -- public -------------------------------------------------------------

    def submit(self, req: LLMRequest) -> simpy.Event:
        tpb = self.cfg.tokens_per_block
        need_total = math.ceil((len(req.prompt) + req.max_new_tokens) / tpb)
        if need_total > self.cfg.total_blocks:
            raise ContractViolation(
                f"request {req.request_id} needs {need_total} blocks, pool has {self.cfg.total_blocks}"
            )
        req.arrival = self.env.now
        req.seq = next(self._seq)
        if req.hashes is None:
            req.hashes = block_hashes(req.prompt, tpb)
        if self.classify is not None:
            req.klass = self.classify(len(req.prompt))
        req.done = self.env.event()
        self.waiting.append(req)
        self._poke()
        return req.done

    # -- admission ----------------------------------------------------------

    def _poke(self) -> None:
        if not self._wake.triggered:
            self._wake.succeed()

    def _footprint(self, r: LLMRequest) -> RequestFootprint:
        v = self.pool.index_version
        if r.fp is None or r.fp_version != v:
            r.fp, r.fp_version = self.pool.footprint(len(r.prompt), r.hashes), v
        return r.fp

    def _entries(self) -> list[QueueEntry]:
        now = self.env.now
        out = []
        for r in self.waiting:
            fp = self._footprint(r)
            out.append(QueueEntry(r.request_id, fp.prompt_tok, fp.hit, fp.need, now - r.arrival, r.seq))
        return out

    def _extra_blocks(self, r: LLMRequest) -> int:
        tpb = self.cfg.tokens_per_block
        return math.ceil((len(r.prompt) + r.max_new_tokens) / tpb) - math.ceil(len(r.prompt) / tpb)

    def _admit(self) -> float:
        """Admit as many requests as fit; return critical-path build time."""
        stall = 0.0
        by_id = {r.request_id: r for r in self.waiting}
        while self.waiting and len(self.running) < self.cfg.max_batch:
            entries = self._entries()
            lam = self.scheduler.refresh(entries, self.pool.available_blocks)
            self._sample(lam)

            def feasible(e: QueueEntry) -> bool:
                r = by_id[e.request_id]
                return self.pool.can_admit(self._footprint(r), r.hashes, self._extra_blocks(r))

            rid = self.scheduler.pick(entries, feasible)
            if rid is None:
                break
            r = by_id.pop(rid)
            self.waiting.remove(r)
            stall += self._start(r, lam)
        return stall

    def _start(self, r: LLMRequest, lam: float) -> float:
        now = self.env.now
        fp = self._footprint(r)
        extra = self._extra_blocks(r)
        alloc = self.pool.admit(r.request_id, fp, r.hashes, now, extra)
        if alloc is None:
            raise ContractViolation(f"scheduler picked infeasible request {r.request_id}")
        r.admitted = now
        r.hit, r.need, r.extra = fp.hit, fp.need, extra
        r.uncached = max(1, len(r.prompt) - fp.hit * self.cfg.tokens_per_block)
        r.context = list(r.prompt)
        self.running.append(r)
        self.admissions.append(AdmissionEvent(now, r.request_id, r.klass, lam))
        if self.spec.enabled:
            return self._request_build(r)
        return 0.0

    def _sample(self, lam: float) -> None:
        long_n = sum(1 for r in self.running if r.klass == "long")
        self.samples.append(
            Sample(self.env.now, lam, len(self.waiting), long_n, len(self.running) - long_n, self.pool.available_blocks)
        )

    # -- draft sources -------------------------------------------------------

    def _request_build(self, r: LLMRequest) -> float:
        cfg = self.spec.cfg
        retrieved = []
        if self.spec.use_memory and self.repo is not None and cfg.top_k > 0 and len(self.repo):
            # retrieval is frozen at admission
            retrieved = retrieve_top_k(r.query, self.repo, cfg.top_k, r.session_id)
        tokens = r.draft_session.pending_tokens(r.prompt) if r.draft_session else len(r.prompt)
        tokens += sum(len(x.entry.query) + len(x.entry.response) for x in retrieved if x.entry.index not in self._members)
        prompt = r.prompt

        def build() -> CompositeDraftSource:
            if r.draft_session is not None:
                session = r.draft_session.catch_up(prompt)
            else:
                session = SuffixAutomaton(max_states=cfg.max_states)
                session.extend_many(prompt)
            src = CompositeDraftSource(session, cfg.session_weight)
            for x in retrieved:
                member = self._members.get(x.entry.index)
                if member is None:
                    member = self._members[x.entry.index] = build_member(x.entry, cfg.max_states)
                src.add_frozen(member, x.similarity)
            src.sync(prompt[-SYNC_TAIL:])
            return src

        handle = self.build_queue.enqueue(build, tokens, r.request_id)
        r.handle = handle
        r.indexed = len(prompt)
        if self.spec.build == SYNC:
            # built right away, on the critical path
            self.build_queue.run_now(handle)
            return tokens * self.latency.sam_build_per_token
        if not self._build_wake.triggered:
            self._build_wake.succeed()
        return 0.0

    def _builder(self):
        while True:
            job = self.build_queue.peek()
            if job is None:
                self._build_wake = self.env.event()
                yield self._build_wake
                continue
            yield self.env.timeout(job.tokens * self.latency.sam_build_per_token)
            self.build_queue.run_next()

    def _source(self, r: LLMRequest) -> CompositeDraftSource | None:
        if r.src is not None:
            return r.src
        if r.handle is None or r.handle.status is not BuildStatus.READY:
            return None
        r.src = r.handle.result
        self._feed(r, r.context[r.indexed :])
        return r.src

    def _feed(self, r: LLMRequest, tokens: Sequence[int]) -> None:
        if not tokens:
            return
        r.src.insert_verified(tokens)
        if r.draft_session is not None:
            r.draft_session.tokens.extend(tokens)
        r.indexed += len(tokens)

    # -- iterations ----------------------------------------------------------

    def _loop(self):
        while True:
            if not self.waiting and not self.running:
                self._wake = self.env.event()
                yield self._wake
                continue
            stall = self._admit()
            if not self.running:
                # nothing fits and nothing will free up on its own
                self._wake = self.env.event()
                yield self._wake
                continue
            dt = self._iterate() + stall
            self.busy_time += dt
            self.iterations += 1
            yield self.env.timeout(dt)
            self._complete()

    def _iterate(self) -> float:
        lat = self.latency
        budget = self.cfg.prefill_chunk
        prefill_tokens = 0
        context_tokens = 0
        draft_tokens = 0
        overhead = 0.0
        batch = len(self.running)
        for r in self.running:
            if not r.decoding:
                take = min(budget, r.uncached - r.prefilled)
                r.prefilled += take
                budget -= take
                prefill_tokens += take
                if r.decoding:
                    if r.handle is not None and not r.checked:
                        overhead += lat.sam_check_overhead
                        r.checked = True
                    step = greedy_step(r.oracle, r.context, r.metrics)
                    r.output.extend(step)
                    if self._source(r) is not None:
                        self._feed(r, step)
                    r.first_pending = True  # stamped when the iteration ends
                continue
            context_tokens += len(r.context)
            remaining = r.max_new_tokens - len(r.output)
            src = self._source(r)
            if src is not None and adaptive_enabled(len(r.context), batch, self.spec.cfg):
                before = r.metrics.proposed_spec_tokens
                step = decode_step(r.oracle, src, r.context, self.spec.cfg, r.metrics, max_tokens=remaining)
                draft_tokens += r.metrics.proposed_spec_tokens - before
                r.indexed += len(step)
                if r.draft_session is not None:
                    r.draft_session.tokens.extend(step)
            else:
                step = greedy_step(r.oracle, r.context, r.metrics)
                if src is not None:
                    self._feed(r, step)
            r.output.extend(step)
        return (
            lat.decode_per_forward_pass
            + prefill_tokens * lat.prefill_per_uncached_token
            + context_tokens * lat.decode_per_context_token
            + draft_tokens * lat.draft_verify_overhead_per_token
            + overhead
        )

    def _complete(self) -> None:
        now = self.env.now
        still = []
        for r in self.running:
            if r.first_pending:
                r.first_token, r.first_pending = now, False
            if r.first_token is not None and len(r.output) >= r.max_new_tokens:
                self._finish(r, now)
            else:
                still.append(r)
        self.running = still

    def _finish(self, r: LLMRequest, now: float) -> None:
        tpb = self.cfg.tokens_per_block
        full = r.hashes
        base = len(full) * tpb
        parent = full[-1] if full else None
        tail = r.prompt[base:] + r.output
        more = block_hashes(tail, tpb) if parent is None else block_hashes(tail, tpb, 0, parent)
        self.pool.release(r.request_id, list(full) + more, now)
        r.finished = now
        if r.remember and self.repo is not None:
            self.repo.add(r.query, r.output, r.session_id)
        self.records.append(
            RequestRecord(
                r.request_id, r.klass, r.tag, r.arrival, r.admitted, r.first_token, now,
                len(r.prompt), len(r.output), r.hit, r.need, r.metrics,
            )
        )
        # drop bulky state; the record keeps what the report needs
        r.src = None
        r.context = []
        r.done.succeed(r)
        self._poke()

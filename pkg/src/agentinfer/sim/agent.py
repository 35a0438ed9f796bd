"""Deep-research agent sessions as simpy processes.

A session plans for a few think steps, then runs tool loops: think, search,
optionally rank-and-filter the results, crawl each kept page and ask a
document-QA call about it, and append the answers to environment memory.
The task needs ``loops`` successful tool loops; on hard loops the small
model usually fails and reports no progress.

Model choice follows the escalation controller when collaboration is on,
otherwise a single fixed model does everything.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import simpy

from ..collab import (
    CollabConfig,
    CollabTrace,
    EscalationController,
    Mode,
    ProgressParseError,
    StepKind,
    format_progress,
    parse_progress,
)
from ..compress import (
    CompressConfig,
    CompressionSession,
    JobStatus,
    overlap_ranker,
    rank_filter,
)
from ..compress import AgentMemory
from .engine import DraftSession, LLMRequest, ServingEngine
from .latency import LatencyModel
from .oracle import MockOracle, hash_ints, unit
from .workload import Page, QueryPlan, Workload


@dataclass
class AgentSettings:
    collab: bool = False
    collab_cfg: CollabConfig = field(default_factory=CollabConfig)
    solo_model: Mode = Mode.LARGE
    compress: bool = False
    compress_cfg: CompressConfig = field(default_factory=CompressConfig)
    search_filter: bool = True
    malformed_rate: float = 0.0
    max_fetch: int = 8
    qa_prefix_tokens: int = 256

    def __post_init__(self) -> None:
        if not 0.0 <= self.malformed_rate <= 1.0:
            raise ValueError("malformed_rate must lie in [0, 1]")
        if self.max_fetch < 0:
            raise ValueError("max_fetch must be >= 0")


@dataclass
class SessionResult:
    session_id: str
    query_id: int
    start: float
    end: float = 0.0
    large_steps: int = 0
    small_steps: int = 0
    escalations: int = 0
    tool_loops: int = 0
    solved_loops: int = 0
    truncated: bool = False
    peak_context: int = 0
    applies: int = 0
    applies_mid_loop: int = 0
    stall_events: int = 0
    reasoning_preserved: bool = True
    context_trace: list[tuple[float, int]] = field(default_factory=list)
    trace: CollabTrace | None = None

    @property
    def e2e(self) -> float:
        return self.end - self.start


class AgentRunner:
    """Runs the queries of a workload on ``n_sessions`` concurrent slots."""

    def __init__(
        self,
        env: simpy.Environment,
        engines: dict[Mode, ServingEngine],
        workload: Workload,
        settings: AgentSettings,
        latency: LatencyModel,
        spec_enabled: bool,
        seed: int,
    ) -> None:
        self.env = env
        self.engines = engines
        self.workload = workload
        self.settings = settings
        self.latency = latency
        self.spec_enabled = spec_enabled
        self.seed = seed
        self.results: list[SessionResult] = []
        self._next = 0
        self.done = env.event()
        self._active = 0

    def start(self) -> simpy.Event:
        cfg = self.workload.cfg
        n = min(cfg.n_sessions, len(self.workload.queries))
        self._active = n
        for slot in range(n):
            self.env.process(self._slot(slot, slot * cfg.start_gap))
        return self.done

    def _slot(self, slot: int, delay: float):
        if delay:
            yield self.env.timeout(delay)
        while self._next < len(self.workload.queries):
            plan = self.workload.queries[self._next]
            self._next += 1
            yield self.env.process(self.session(plan))
        self._active -= 1
        if self._active == 0:
            self.done.succeed()

    # -- one query -----------------------------------------------------------

    def session(self, plan: QueryPlan):
        env, st, wcfg = self.env, self.settings, self.workload.cfg
        res = SessionResult(plan.session_id, plan.query_id, env.now)
        self.results.append(res)
        rng = random.Random(hash_ints(self.seed, plan.seed))
        header = list(self.workload.system) + list(plan.query)
        memory = AgentMemory()
        oracles = {
            m: MockOracle(hash_ints(plan.seed, i), wcfg.vocab_size, wcfg.rho, wcfg.oracle_order, plan.topic.kindex)
            for i, m in enumerate((Mode.LARGE, Mode.SMALL))
        }
        drafts = {m: DraftSession(e.spec.cfg) for m, e in self.engines.items()} if self.spec_enabled else {}
        comp = CompressionSession(memory, st.compress_cfg) if st.compress else None
        ctl = EscalationController(st.collab_cfg) if st.collab else None
        max_steps = st.collab_cfg.max_total_steps
        steps = 0
        state = {"in_loop": False}

        def context() -> list[int]:
            return header + memory.tokens()

        def note_context() -> None:
            n = len(header) + memory.total_tokens
            res.peak_context = max(res.peak_context, n)
            res.context_trace.append((env.now, n))

        def llm(mode: Mode, prompt: list[int], n: int, tag: str, oracle, remember: bool):
            engine = self.engines[mode]
            req = LLMRequest(
                request_id=f"{plan.session_id}/{tag}{steps}",
                prompt=prompt,
                max_new_tokens=n,
                oracle=oracle,
                session_id=plan.session_id,
                query=plan.query,
                draft_session=drafts.get(mode) if remember else None,
                remember=remember,
                tag=tag,
            )
            yield engine.submit(req)
            if mode is Mode.LARGE:
                res.large_steps += tag == "think"
            else:
                res.small_steps += tag == "think"
            return req.output

        def fetch(mode: Mode, page: Page, j: int):
            yield env.timeout(self.latency.tool_time("url_crawler", rng))
            prompt = list(self.workload.system[: st.qa_prefix_tokens]) + list(plan.query) + list(page.content)
            oracle = MockOracle(
                hash_ints(plan.seed, res.tool_loops, j, 7), wcfg.vocab_size, wcfg.rho, wcfg.oracle_order, plan.topic.kindex
            )
            engine = self.engines[mode]
            req = LLMRequest(
                request_id=f"{plan.session_id}/qa{res.tool_loops}.{j}",
                prompt=prompt,
                max_new_tokens=wcfg.qa_tokens,
                oracle=oracle,
                session_id=plan.session_id,
                query=plan.query,
                tag="qa",
            )
            yield engine.submit(req)
            return req.output

        def tool_loop(mode: Mode):
            yield env.timeout(self.latency.tool_time("batch_web_search", rng))
            pages = plan.search(res.tool_loops)
            if st.compress and st.search_filter:
                yield env.timeout(self.latency.tool_time("rank", rng))
                by_url = {p.result.url: p for p in pages}
                kept = [by_url[r.url] for r in rank_filter([p.result for p in pages], plan.query, overlap_ranker, st.compress_cfg)]
            else:
                kept = pages
            kept = kept[: st.max_fetch]
            procs = [env.process(fetch(mode, p, j)) for j, p in enumerate(kept)]
            answers = yield env.all_of(procs)
            for p, proc in zip(kept, procs):
                qa = answers[proc]
                memory.add_tool(list(p.result.snippet) + list(qa) + list(p.content[: wcfg.excerpt_tokens]))
            memory.end_loop()
            res.tool_loops += 1

        def boundary():
            # loop boundary: the only place summaries are swapped in
            if comp is None:
                return
            if comp.job is not None and comp.job.status is not JobStatus.PENDING:
                if state["in_loop"]:
                    res.applies_mid_loop += 1
                before = [e.tokens for e in memory.reasoning()]
                applied = comp.apply(at_boundary=True)
                if applied is not None:
                    res.applies += 1
                    if [e.tokens for e in memory.reasoning()] != before:
                        res.reasoning_preserved = False
                note_context()
            if comp.should_compress(loop_completed=True):
                job = comp.submit(env.now)
                env.process(distill(job))

        def distill(job):
            yield env.timeout(st.compress_cfg.distill_latency)
            if comp.job is job:
                comp.run()

        def progress_text(value: bool) -> str:
            text = format_progress(value, "loop outcome")
            if st.malformed_rate and unit(plan.seed, steps, 11) < st.malformed_rate:
                text = text.replace("<value>", "<val>")
            return text

        def solved(mode: Mode) -> bool:
            hard = plan.hard[min(res.solved_loops, len(plan.hard) - 1)]
            if not hard or mode is Mode.LARGE:
                return True
            return unit(plan.seed, res.tool_loops, 13) < wcfg.small_solve_prob

        planning = 0
        note_context()
        while True:
            final = res.solved_loops >= wcfg.loops
            if ctl is not None:
                if not ctl.wants_step(final):
                    break
                mode, kind = ctl.next_step()
            else:
                if planning < st.collab_cfg.K_L:
                    mode, kind = st.solo_model, StepKind.THINK
                elif final:
                    break
                else:
                    mode, kind = st.solo_model, StepKind.THINK_AND_TOOLS
            if steps >= max_steps:
                res.truncated = True
                break
            steps += 1
            state["in_loop"] = True
            n_out = wcfg.plan_tokens if kind is StepKind.THINK else wcfg.think_tokens
            out = yield env.process(llm(mode, context(), n_out, "think", oracles[mode], True))
            memory.add_think(out)
            note_context()
            if kind is StepKind.THINK:
                planning += 1
                ok = True
            else:
                ok = solved(mode)
                yield env.process(tool_loop(mode))
                if ok:
                    res.solved_loops += 1
                note_context()
            state["in_loop"] = False
            if kind is StepKind.THINK_AND_TOOLS:
                boundary()
            if ctl is not None:
                try:
                    value: bool | None = parse_progress(progress_text(ok)).value
                except ProgressParseError:
                    value = None
                ctl.record(value, final=res.solved_loops >= wcfg.loops)
        if ctl is not None:
            res.trace = ctl.trace
            res.escalations = ctl.trace.escalations
        res.end = env.now
        return res

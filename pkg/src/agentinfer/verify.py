"""Acceptance checks, each returning a pass/fail verdict with a short detail line.

Shared by ``agentinfer verify`` and the acceptance test module. Every check
runs on the bundled presets and compares against an independent reference
(brute force, plain greedy decoding, closed-form values) where one exists.
"""

from __future__ import annotations

import random
import statistics
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from scipy.stats import spearmanr

from .collab import CollabConfig, CollabTrace, TruncatedRun, format_progress, run_collab
from .sam import SuffixAutomaton
from .sched import QueueEntry, SchedulerParams, SchedulerState, rank_agentsched, rank_sjf, update_lambda
from .sim.oracle import MockOracle
from .sim.scenarios import (
    load_preset,
    scenario_compress,
    scenario_composite,
    scenario_ote_vs_context,
    scenario_sam_async,
    scenario_sched_compare,
)
from .specdec import MemoryRepository, SpecConfig, StopRule, build_composite, greedy_decode, retrieve_top_k, run_decode


@dataclass
class Verdict:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


# -- 1. automaton correctness ------------------------------------------------------


def _substrings(corpus: list[int]) -> set[bytes]:
    b = bytes(corpus)
    n = len(b)
    return {b[i:j] for i in range(n) for j in range(i + 1, n + 1)}


def _accepts_every_suffix(sam: SuffixAutomaton, corpus: list[int]) -> bool:
    # walking a whole suffix from the root accepts each of its prefixes on the way,
    # so this covers every substring
    for i in range(len(corpus)):
        s = 0
        for t in corpus[i:]:
            s = sam.next[s].get(t, -1)
            if s < 0:
                return False
    return True


def check_sam_correctness(n_corpora: int = 500, max_len: int = 200, max_vocab: int = 16, seed: int = 0) -> tuple[bool, str]:
    rng = random.Random(seed)
    bad_set = bad_bound = 0
    for _ in range(n_corpora):
        vocab = rng.randint(1, max_vocab)
        corpus = [rng.randrange(vocab) for _ in range(rng.randint(0, max_len))]
        sam = SuffixAutomaton()
        sam.extend_many(corpus)
        subs = _substrings(corpus)
        # equal counts plus inclusion means the accepted set is exactly the substring set
        if sam.count_accepted() != len(subs) + 1 or not _accepts_every_suffix(sam, corpus):
            bad_set += 1
        n = len(corpus)
        if n >= 2 and sam.num_states > 2 * n - 1:
            bad_bound += 1
    ok = bad_set == 0 and bad_bound == 0
    return ok, f"{n_corpora} corpora, set mismatches={bad_set}, state-bound violations={bad_bound}"


# -- 2. speculative losslessness ------------------------------------------------------


def check_lossless(pairs: int = 100, seed: int = 0) -> tuple[bool, str]:
    rng = random.Random(seed)
    mismatches = 0
    accepted = 0
    for i in range(pairs):
        vocab = rng.choice([4, 16, 64, 1000])
        oracle_seed = rng.randrange(1 << 30)
        rho = rng.random()
        prompt = [rng.randrange(vocab) for _ in range(rng.randint(1, 300))]
        stop_tokens = frozenset({rng.randrange(vocab)}) if rng.random() < 0.3 else frozenset()
        stop = StopRule(rng.randint(1, 120), stop_tokens)
        repo = MemoryRepository()
        for j in range(rng.randint(0, 4)):
            text = [rng.randrange(vocab) for _ in range(rng.randint(1, 200))]
            if rng.random() < 0.5:
                # history from the same model makes drafts actually land
                text = greedy_decode(MockOracle(oracle_seed, vocab, rho), prompt, StopRule(rng.randint(1, 150)))
            repo.add(prompt[: rng.randint(0, len(prompt))], text, f"h{j}")
        cfg = SpecConfig(n_propose=rng.randint(2, 8), top_k=rng.randint(0, 3), min_match=rng.randint(1, 3))
        hits = retrieve_top_k(prompt[:20], repo, cfg.top_k, "current")
        session_ctx = [rng.randrange(vocab) for _ in range(rng.randint(0, 50))]
        src = build_composite(session_ctx, prompt, hits, cfg)
        ref = greedy_decode(MockOracle(oracle_seed, vocab, rho), prompt, stop)
        out, m = run_decode(MockOracle(oracle_seed, vocab, rho), src, prompt, stop, cfg)
        mismatches += out != ref
        accepted += m.accepted_spec_tokens
    return mismatches == 0, f"{pairs} pairs, mismatches={mismatches}, accepted draft tokens={accepted}"


# -- 3. OTE trend --------------------------------------------------------------------


def check_ote_trend(cfg=None) -> tuple[bool, str]:
    cfg = cfg or load_preset("ote_sweep")
    pts = scenario_ote_vs_context(cfg)
    lengths = [p.context_len for p in pts]
    problems = []
    for label, series in (("sam", [p.ote_sam for p in pts]), ("memory", [p.ote_memory for p in pts])):
        if any(b < a for a, b in zip(series, series[1:])):
            problems.append(f"{label} OTE not monotone")
        rho = spearmanr(lengths, series).statistic
        if not rho > 0.8:
            problems.append(f"{label} spearman {rho:.3f} <= 0.8")
    if any(p.ote_memory < p.ote_sam for p in pts):
        problems.append("memory OTE below SAM-only OTE")
    flat = scenario_ote_vs_context(cfg.replace(workload={"rho": 0.0}))
    worst = max(abs(p.ote_memory - 1.0) for p in flat)
    worst = max(worst, max(abs(p.ote_sam - 1.0) for p in flat))
    if worst > 0.05:
        problems.append(f"no-copy oracle OTE off by {worst:.3f}")
    curve = " ".join(f"{p.context_len}:{p.ote_sam:.2f}/{p.ote_memory:.2f}" for p in pts)
    return not problems, "; ".join(problems) or f"OTE sam/memory {curve}; no-copy max |OTE-1|={worst:.3f}"


# -- 4. scheduler ordering ---------------------------------------------------------------


def check_sched_ordering(cfg=None) -> tuple[bool, str]:
    cfg = cfg or load_preset("sched_compare")
    hits: dict[str, list[float]] = {"fcfs": [], "sjf": [], "agentsched": []}
    hit_wins = e2e_wins = 0
    for seed in cfg.seeds:
        reps = scenario_sched_compare(cfg, seed)
        h = {p: r.hit_rate for p, r in reps.items()}
        for p in hits:
            hits[p].append(h[p])
        hit_wins += h["agentsched"] > h["fcfs"] > h["sjf"]
        e2e_wins += reps["agentsched"].mean("e2e") < reps["fcfs"].mean("e2e")
    med = {p: statistics.median(v) for p, v in hits.items()}
    need = len(cfg.seeds) - 1 if len(cfg.seeds) >= 5 else len(cfg.seeds)
    ok = med["agentsched"] > med["fcfs"] > med["sjf"] and hit_wins >= need and e2e_wins >= need
    detail = (
        f"median hit agentsched={med['agentsched']:.3f} fcfs={med['fcfs']:.3f} sjf={med['sjf']:.3f}; "
        f"hit ordering on {hit_wins}/{len(cfg.seeds)} seeds, agentsched E2E < fcfs on {e2e_wins}/{len(cfg.seeds)}"
    )
    return ok, detail


# -- 5. shadow-price algebra -----------------------------------------------------------------


def _entry(i: int, prompt_tok: int, hit: int, need: int, wait: float = 0.0) -> QueueEntry:
    return QueueEntry(f"r{i}", prompt_tok, hit, need, wait, i)


def check_lambda_algebra(queues: int = 1000, seed: int = 0) -> tuple[bool, str]:
    problems = []
    params = SchedulerParams()
    # z = 1: demand equals usable capacity plus the guard
    lam = update_lambda(SchedulerState(), [_entry(0, 1600, 40, 61)], 100, params)
    if abs(lam - 0.5 * params.lambda_max) > 1e-12:
        problems.append(f"z=1 gives {lam!r}")
    grid = [update_lambda(SchedulerState(), [_entry(0, 16, 0, d)], 100, params) for d in range(1, 101)]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        problems.append("lambda not strictly increasing in demand")
    limit = SchedulerParams(a=0.0, c=0.0)
    rng = random.Random(seed)
    diffs = 0
    for _ in range(queues):
        q = [
            _entry(i, rng.randint(1, 50) * rng.choice([1, 16, 100]), rng.randint(0, 50), rng.randint(0, 50), rng.random() * 60)
            for i in range(rng.randint(1, 12))
        ]
        rng.shuffle(q)
        diffs += [e.request_id for e in rank_agentsched(q, 0.0, limit)] != [e.request_id for e in rank_sjf(q)]
    if diffs:
        problems.append(f"{diffs} queues ordered differently from SJF at lambda=0")
    return not problems, "; ".join(problems) or f"z=1 exact, 100-point grid strictly increasing, {queues} queues match SJF"


# -- 6. background automaton build --------------------------------------------------------------


def check_async_build(cfg=None) -> tuple[bool, str]:
    reps = scenario_sam_async(cfg)
    ttft = {m: r.mean("ttft") for m, r in reps.items()}
    tpot = {m: r.mean("tpot") for m, r in reps.items()}
    build = reps["sync"].extras["build_latency"]
    ok = (
        ttft["async"] <= 1.10 * ttft["none"]
        and ttft["sync"] >= ttft["none"] + build
        and tpot["sync"] <= tpot["async"] <= tpot["none"]
    )
    detail = (
        f"TTFT none={ttft['none']:.3f}s sync={ttft['sync']:.3f}s async={ttft['async']:.3f}s build={build:.3f}s; "
        f"TPOT sync={tpot['sync'] * 1e3:.2f}ms async={tpot['async'] * 1e3:.2f}ms none={tpot['none'] * 1e3:.2f}ms"
    )
    return ok, detail


# -- 7. escalation budgets ------------------------------------------------------------------------


class ScriptedModel:
    """Model stand-in whose progress reports follow a fixed script."""

    def __init__(self, role: str, report: Callable[[int], str], final_after: int | None = None) -> None:
        self.role = role
        self.report = report
        self.final_after = final_after
        self.calls = 0

    def think(self, ctx: list[Any]) -> Any:
        self.calls += 1
        return f"{self.role}-think"

    def think_and_tools(self, ctx: list[Any]) -> Any:
        self.calls += 1
        return f"{self.role}-act"

    def progress_check(self, ctx: list[Any]) -> str:
        return self.report(self.calls)

    def is_final(self, ctx: list[Any]) -> bool:
        return self.final_after is not None and len(ctx) > self.final_after


def _always(value: bool) -> Callable[[int], str]:
    return lambda _: format_progress(value, "scripted")


def _run(large: ScriptedModel, small: ScriptedModel, cfg: CollabConfig) -> CollabTrace:
    try:
        return run_collab("query", large, small, cfg)[1]
    except TruncatedRun as exc:
        return exc.trace


def check_collab_budgets() -> tuple[bool, str]:
    problems = []
    for K_L, B_L in ((1, 1), (2, 2), (3, 4)):
        cfg = CollabConfig(K_L=K_L, B_L=B_L, max_total_steps=200)
        t = _run(ScriptedModel("large", _always(False)), ScriptedModel("small", _always(True), final_after=12), cfg)
        if t.large_steps != K_L:
            problems.append(f"always-TRUE small: {t.large_steps} large steps, expected {K_L}")
        cycles = 5
        cfg = CollabConfig(K_L=K_L, B_L=B_L, max_total_steps=K_L + cycles * (1 + B_L))
        t = _run(ScriptedModel("large", _always(False)), ScriptedModel("small", _always(False)), cfg)
        if any(b > B_L for b in t.bursts):
            problems.append(f"burst above B_L={B_L}: {t.bursts}")
        if t.large_steps != K_L + B_L * t.escalations or t.escalations != cycles:
            problems.append(f"always-FALSE: large={t.large_steps} escalations={t.escalations} K_L={K_L} B_L={B_L}")
    cfg = CollabConfig(K_L=1, B_L=1, max_total_steps=4)
    t = _run(ScriptedModel("large", _always(True)), ScriptedModel("small", lambda _: "<progress>maybe</progress>"), cfg)
    if t.escalations < 1 or t.malformed < 1:
        problems.append("malformed progress did not escalate")
    return not problems, "; ".join(problems) or "K_L, B_L and K_L + B_L*escalations hold; malformed block escalates"


# -- 8. compression safety ---------------------------------------------------------------------------


def check_compression(cfg=None) -> tuple[bool, str]:
    reps = scenario_compress(cfg)
    off, on = reps["off"].summary(), reps["on"].summary()
    reduction = 1.0 - on["peak_context"] / off["peak_context"]
    ok = (
        on["reasoning_preserved"]
        and on["applies"] > 0
        and reduction >= 0.40
        and on["applies_mid_loop"] == 0
        and on["stall_events"] == 0
    )
    detail = (
        f"peak context {off['peak_context']} -> {on['peak_context']} ({reduction:.0%} lower), applies={on['applies']}, "
        f"mid-loop={on['applies_mid_loop']}, stalls={on['stall_events']}, reasoning intact={on['reasoning_preserved']}"
    )
    return ok, detail


# -- 9. feature composition -------------------------------------------------------------------------


def check_composition(cfg=None) -> tuple[bool, str]:
    reps = scenario_composite(cfg)
    qps = [r.qps for r in reps.values()]
    monotone = all(b >= a for a, b in zip(qps, qps[1:]))
    total = qps[-1] / qps[0] if qps[0] else 0.0
    stages = " ".join(f"{k}={r.extras['qps_vs_baseline']:.2f}x" for k, r in reps.items())
    return monotone and total >= 1.3, f"{stages}; monotone={monotone}"


# -- 10. determinism -----------------------------------------------------------------------------------


def check_determinism(preset: str = "compress", seed: int = 7) -> tuple[bool, str]:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for run in ("a", "b"):
            d = Path(tmp) / run
            code = main(["run", preset, "--seed", str(seed), "--out-dir", str(d)])
            if code != 0:
                return False, f"run exited with {code}"
            outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
    same = bool(outs[0]) and outs[0] == outs[1]
    return same, f"{len(outs[0])} CSV files from preset {preset!r} seed {seed}: {'identical' if same else 'differ'}"


CHECKS: list[tuple[int, str, Callable[[], tuple[bool, str]]]] = [
    (1, "automaton correctness", check_sam_correctness),
    (2, "speculative losslessness", check_lossless),
    (3, "OTE/SHR trend", check_ote_trend),
    (4, "scheduler ordering", check_sched_ordering),
    (5, "shadow-price algebra", check_lambda_algebra),
    (6, "background automaton build", check_async_build),
    (7, "escalation budgets", check_collab_budgets),
    (8, "compression safety", check_compression),
    (9, "feature composition", check_composition),
    (10, "determinism", check_determinism),
]


def run_check(number: int) -> Verdict:
    for n, name, fn in CHECKS:
        if n == number:
            t = time.perf_counter()
            ok, detail = fn()
            return Verdict(n, name, bool(ok), detail, time.perf_counter() - t)
    raise KeyError(f"no check numbered {number}")


def run_all(numbers: list[int] | None = None) -> list[Verdict]:
    return [run_check(n) for n, _, _ in CHECKS if numbers is None or n in numbers]

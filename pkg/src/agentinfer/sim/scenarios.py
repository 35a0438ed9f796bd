"""Scenario drivers: one simulated run per (config, seed), plus comparisons.

Comparison scenarios run the same workload and seed under several feature
settings, so every variant sees an identical arrival and content trace.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING

import simpy

from ..collab import Mode
from ..sched import Scheduler
from ..specdec import (
    DecodeMetrics,
    MemoryRepository,
    StopRule,
    build_composite,
    greedy_decode,
    retrieve_top_k,
    run_decode,
)
from .agent import AgentRunner, AgentSettings
from .engine import LLMRequest, ServingEngine
from .oracle import KnowledgeIndex, MockOracle, hash_ints
from .report import MetricsReport
from .workload import LONG, Workload

if TYPE_CHECKING:
    from ..config import ScenarioConfig


def load_preset(name: str) -> ScenarioConfig:
    from ..config import from_dict
    import yaml

    text = resources.files("agentinfer.presets").joinpath(f"{name}.yaml").read_text()
    return from_dict(yaml.safe_load(text))


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("agentinfer.presets").iterdir() if p.name.endswith(".yaml"))


# -- single runs ---------------------------------------------------------------


def run_scenario(cfg: ScenarioConfig, seed: int | None = None) -> MetricsReport:
    """Simulate ``cfg`` once; the result depends only on ``(cfg, seed)``."""
    seed = cfg.seed if seed is None else seed
    if cfg.workload.kind == "repetitive":
        return _run_repetitive(cfg, seed)
    return _run_agents(cfg, seed)


def _engine(env: simpy.Environment, cfg: ScenarioConfig, name: str, small: bool, repo, classify) -> ServingEngine:
    lat = cfg.latency.scaled(cfg.engine.small_cost) if small else cfg.latency
    return ServingEngine(
        env,
        name,
        lat,
        cfg.engine_config(small),
        Scheduler(cfg.sched.policy, cfg.sched.params(cfg.pool.tpb)),
        cfg.spec.settings(),
        repo,
        classify,
    )


def _run_agents(cfg: ScenarioConfig, seed: int) -> MetricsReport:
    env = simpy.Environment()
    wl = Workload(cfg.workload, seed)
    repo = MemoryRepository()
    solo = Mode(cfg.collab.solo_model)
    wanted = (Mode.LARGE, Mode.SMALL) if cfg.collab.enabled else (solo,)
    engines = {m: _engine(env, cfg, m.value.lower(), m is Mode.SMALL, repo, wl.classify) for m in wanted}
    settings = AgentSettings(
        collab=cfg.collab.enabled,
        collab_cfg=cfg.collab.collab_config(),
        solo_model=solo,
        compress=cfg.compress.enabled,
        compress_cfg=cfg.compress.compress_config(),
        search_filter=cfg.compress.search_filter,
        malformed_rate=cfg.collab.malformed_rate,
    )
    runner = AgentRunner(env, engines, wl, settings, cfg.latency, cfg.spec.settings().enabled, seed)
    env.run(until=runner.start())
    return MetricsReport.collect(cfg.scenario, seed, list(engines.values()), runner.results)


def repetitive_prompt(cfg: ScenarioConfig, seed: int) -> list[int]:
    w = cfg.workload
    rng = random.Random(seed)
    period = [rng.randrange(w.vocab_size) for _ in range(w.period_tokens)]
    return (period * math.ceil(w.prompt_tokens / w.period_tokens))[: w.prompt_tokens]


def _run_repetitive(cfg: ScenarioConfig, seed: int) -> MetricsReport:
    env = simpy.Environment()
    w = cfg.workload
    engine = _engine(env, cfg, "large", False, None, lambda n: LONG if n > w.long_threshold else "short")
    prompt = repetitive_prompt(cfg, seed)
    engine.pool.prewarm(engine.pool.hashes_for(prompt[: w.prewarm_tokens]))
    oracle = MockOracle(hash_ints(seed, 5), w.vocab_size, w.rho, w.oracle_order)
    engine.submit(LLMRequest("r0", prompt, w.output_tokens, oracle))
    env.run()
    rep = MetricsReport.collect(cfg.scenario, seed, [engine])
    build = len(prompt) * cfg.latency.sam_build_per_token if engine.spec.enabled else 0.0
    rep.extras.update(build_mode=cfg.spec.build, build_latency=build)
    return rep


# -- comparisons ---------------------------------------------------------------


def scenario_sched_compare(cfg: ScenarioConfig | None = None, seed: int | None = None) -> dict[str, MetricsReport]:
    """FCFS, SJF and the cache-aware scheduler on one arrival trace."""
    cfg = cfg or load_preset("sched_compare")
    return {p: run_scenario(cfg.replace(sched={"policy": p}), seed) for p in ("fcfs", "sjf", "agentsched")}


def scenario_sam_async(cfg: ScenarioConfig | None = None, seed: int | None = None) -> dict[str, MetricsReport]:
    """No speculation, synchronous build and background build on the long repetitive prompt."""
    cfg = cfg or load_preset("sam_async")
    return {m: run_scenario(cfg.replace(spec={"build": m}), seed) for m in ("none", "sync", "async")}


def scenario_collab(cfg: ScenarioConfig | None = None, seed: int | None = None) -> dict[str, MetricsReport]:
    cfg = cfg or load_preset("collab")
    runs = {
        "large_only": cfg.replace(collab={"enabled": False, "solo_model": "LARGE"}),
        "small_only": cfg.replace(collab={"enabled": False, "solo_model": "SMALL"}),
        "collab": cfg.replace(collab={"enabled": True}),
    }
    out = {k: run_scenario(c, seed) for k, c in runs.items()}
    base = out["large_only"].summary()["mean_session_e2e"]
    for rep in out.values():
        rep.extras["speedup_vs_large"] = base / rep.summary()["mean_session_e2e"]
    return out


def scenario_compress(cfg: ScenarioConfig | None = None, seed: int | None = None) -> dict[str, MetricsReport]:
    cfg = cfg or load_preset("compress")
    return {
        "off": run_scenario(cfg.replace(compress={"enabled": False}), seed),
        "on": run_scenario(cfg.replace(compress={"enabled": True}), seed),
    }


COMPOSITE_STAGES = (
    ("baseline", {}),
    ("+collab", {"collab": {"enabled": True}}),
    ("+compress", {"compress": {"enabled": True}}),
    ("+sched", {"sched": {"policy": "agentsched"}}),
    ("+specdec", {"spec": {"build": "async"}}),
)


def composite_configs(cfg: ScenarioConfig) -> list[tuple[str, ScenarioConfig]]:
    """Cumulative feature stages, starting from everything off and FCFS."""
    cur = cfg.replace(
        collab={"enabled": False, "solo_model": "LARGE"},
        compress={"enabled": False},
        sched={"policy": "fcfs"},
        spec={"build": "none"},
    )
    out = []
    for name, change in COMPOSITE_STAGES:
        if change:
            cur = cur.replace(**change)
        out.append((name, cur))
    return out


def scenario_composite(cfg: ScenarioConfig | None = None, seed: int | None = None) -> dict[str, MetricsReport]:
    cfg = cfg or load_preset("composite")
    out = {name: run_scenario(c, seed) for name, c in composite_configs(cfg)}
    base = out["baseline"].qps
    for rep in out.values():
        rep.extras["qps_vs_baseline"] = rep.qps / base if base else 0.0
    return out


# -- lambda trace ----------------------------------------------------------------


@dataclass
class LambdaTrace:
    series: list[tuple[float, float]]
    queue: list[tuple[float, int, int, int]]
    long_share_low: float
    long_share_high: float
    admissions_low: int
    admissions_high: int

    @property
    def ordered(self) -> bool:
        """High-price phases admit a larger share of long requests than low-price phases."""
        return self.admissions_low > 0 and self.admissions_high > 0 and self.long_share_high > self.long_share_low


def lambda_trace(report: MetricsReport, lambda_max: float) -> LambdaTrace:
    low = [k for _, k, lam in report.admissions if lam < 0.5 * lambda_max]
    high = [k for _, k, lam in report.admissions if lam > 0.5 * lambda_max]

    def share(xs: list[str]) -> float:
        return sum(1 for k in xs if k == LONG) / len(xs) if xs else 0.0

    return LambdaTrace(report.lambda_series, report.queue_series, share(low), share(high), len(low), len(high))


# -- context-length sweep ----------------------------------------------------------


@dataclass
class SweepPoint:
    context_len: int
    ote_sam: float
    shr_sam: float
    ote_memory: float
    shr_memory: float


def _rates(m: DecodeMetrics) -> tuple[float, float]:
    ote = m.generated_tokens / m.forward_passes if m.forward_passes else 0.0
    shr = m.accepted_spec_tokens / m.proposed_spec_tokens if m.proposed_spec_tokens else 0.0
    return ote, shr


def scenario_ote_vs_context(cfg: ScenarioConfig | None = None, seed: int | None = None) -> list[SweepPoint]:
    """Decode from prompts of growing length that quote the topic text.

    Each point compares the session automaton alone against the session
    automaton plus retrieved history from earlier same-topic sessions.
    """
    cfg = cfg or load_preset("ote_sweep")
    seed = cfg.seed if seed is None else seed
    w, sw = cfg.workload, cfg.sweep
    spec = cfg.spec.spec_config()
    rng = random.Random(seed)
    V = w.vocab_size
    knowledge = [rng.randrange(V) for _ in range(w.knowledge_tokens)]
    kindex = KnowledgeIndex(knowledge, w.oracle_order)
    header = [rng.randrange(V) for _ in range(w.header_tokens)]
    span = max(1, min(500, w.knowledge_tokens // 4))

    def prompt(length: int, r: random.Random) -> tuple[list[int], list[int]]:
        query = header + [r.randrange(V) for _ in range(w.query_tokens)]
        p = list(query)
        while len(p) < length:
            s = r.randrange(len(knowledge) - span)
            p += knowledge[s : s + span]
        return query, p[:length]

    repo = MemoryRepository()
    for i in range(sw.memory_sessions):
        r = random.Random(hash_ints(seed, 17, i))
        q, p = prompt(4000, r)
        oracle = MockOracle(hash_ints(seed, 19, i), V, w.rho, w.oracle_order, kindex)
        repo.add(q, greedy_decode(oracle, p, StopRule(sw.memory_output_tokens)), f"prior{i}")

    points = []
    for length in sw.lengths:
        totals = [DecodeMetrics(), DecodeMetrics()]
        for j in range(sw.repeats):
            r = random.Random(hash_ints(seed, length, j))
            q, p = prompt(length, r)
            for slot, use_memory in enumerate((False, True)):
                oracle = MockOracle(hash_ints(seed, 23, j), V, w.rho, w.oracle_order, kindex)
                hits = retrieve_top_k(q, repo, spec.top_k, "current") if use_memory else []
                src = build_composite([], p, hits, spec)
                _, m = run_decode(oracle, src, p, StopRule(sw.output_tokens), spec)
                totals[slot] = totals[slot].merge(m)
        (o1, s1), (o2, s2) = _rates(totals[0]), _rates(totals[1])
        points.append(SweepPoint(length, o1, s1, o2, s2))
    return points

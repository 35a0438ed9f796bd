"""Synthetic token-level workloads for deep-research style agent sessions.

Each topic owns a background text; relevant search results quote it, and
the mock model quotes it too, which is what makes drafts from earlier
context useful. Irrelevant results are pseudo-random tokens.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..compress import SearchResult
from .oracle import KnowledgeIndex

LONG = "long"
SHORT = "short"


KINDS = ("agents", "repetitive")


@dataclass
class WorkloadConfig:
    kind: str = "agents"
    vocab_size: int = 32000
    n_sessions: int = 4
    n_queries: int = 4
    n_topics: int = 2
    knowledge_tokens: int = 40000
    system_tokens: int = 600
    header_tokens: int = 12
    query_tokens: int = 8
    loops: int = 12
    results_per_search: int = 6
    irrelevant_share: float = 0.3
    page_tokens_min: int = 1500
    page_tokens_max: int = 3000
    excerpt_tokens: int = 400
    snippet_tokens: int = 40
    think_tokens: int = 400
    plan_tokens: int = 200
    qa_tokens: int = 160
    hard_share: float = 0.25
    small_solve_prob: float = 0.3
    rho: float = 0.8
    oracle_order: int = 4
    long_threshold: int = 10000
    start_gap: float = 0.0
    # single long request with a periodic prompt ("repetitive" kind)
    prompt_tokens: int = 30000
    period_tokens: int = 2000
    prewarm_tokens: int = 27000
    output_tokens: int = 512

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 0 <= self.prewarm_tokens <= self.prompt_tokens or self.period_tokens < 1 or self.output_tokens < 1:
            raise ValueError("prewarm_tokens must lie in [0, prompt_tokens]; period_tokens, output_tokens >= 1")
        for name in ("vocab_size", "n_sessions", "n_queries", "n_topics", "knowledge_tokens", "loops", "think_tokens", "qa_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.page_tokens_min <= self.page_tokens_max < self.knowledge_tokens:
            raise ValueError("need 0 < page_tokens_min <= page_tokens_max < knowledge_tokens")
        for name in ("irrelevant_share", "hard_share", "small_solve_prob", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.results_per_search < 0 or self.excerpt_tokens < 0 or self.snippet_tokens < 1:
            raise ValueError("result sizes must be non-negative (snippets at least one token)")


def classify(prompt_tok: int, threshold: int) -> str:
    """Requests with prompts above ``threshold`` tokens are long."""
    return LONG if prompt_tok > threshold else SHORT


@dataclass
class Topic:
    index: int
    header: tuple[int, ...]
    knowledge: tuple[int, ...]
    kindex: KnowledgeIndex


@dataclass
class Page:
    result: SearchResult
    content: tuple[int, ...]
    relevant: bool


@dataclass
class QueryPlan:
    query_id: int
    session_id: str
    topic: Topic
    query: tuple[int, ...]
    seed: int
    hard: list[bool]
    rng_seed: int
    _cfg: WorkloadConfig = field(repr=False, default=None)

    def search(self, attempt: int) -> list[Page]:
        """Search results for the ``attempt``-th tool loop (deterministic)."""
        cfg = self._cfg
        rng = random.Random(self.rng_seed * 1_000_003 + attempt)
        k = self.topic.knowledge
        pages = []
        for j in range(cfg.results_per_search):
            relevant = rng.random() >= cfg.irrelevant_share
            length = rng.randint(cfg.page_tokens_min, cfg.page_tokens_max)
            if relevant:
                start = rng.randrange(len(k) - length)
                content = k[start : start + length]
                cue = rng.sample(self.query, max(1, len(self.query) // 2))
                title = tuple(cue) + content[:8]
            else:
                content = tuple(rng.randrange(cfg.vocab_size) for _ in range(length))
                title = content[:12]
            snippet = content[: cfg.snippet_tokens]
            url = f"q{self.query_id}/a{attempt}/r{j}"
            pages.append(Page(SearchResult(url, title, snippet, content_tokens=length), content, relevant))
        return pages


class Workload:
    """All queries of a run, generated up front from ``(cfg, seed)``."""

    def __init__(self, cfg: WorkloadConfig, seed: int) -> None:
        self.cfg = cfg
        self.seed = seed
        rng = random.Random(seed)
        V = cfg.vocab_size
        self.system = tuple(rng.randrange(V) for _ in range(cfg.system_tokens))
        self.topics = []
        for t in range(cfg.n_topics):
            header = tuple(rng.randrange(V) for _ in range(cfg.header_tokens))
            knowledge = tuple(rng.randrange(V) for _ in range(cfg.knowledge_tokens))
            self.topics.append(Topic(t, header, knowledge, KnowledgeIndex(knowledge, cfg.oracle_order)))
        self.queries: list[QueryPlan] = []
        for q in range(cfg.n_queries):
            topic = self.topics[q % cfg.n_topics]
            query = topic.header + tuple(rng.randrange(V) for _ in range(cfg.query_tokens))
            hard = [rng.random() < cfg.hard_share for _ in range(cfg.loops)]
            self.queries.append(
                QueryPlan(
                    query_id=q,
                    session_id=f"s{q}",
                    topic=topic,
                    query=query,
                    seed=rng.randrange(1 << 31),
                    hard=hard,
                    rng_seed=rng.randrange(1 << 31),
                    _cfg=cfg,
                )
            )

    def classify(self, prompt_tok: int) -> str:
        return classify(prompt_tok, self.cfg.long_threshold)

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentinfer.compress import (
    SUMMARY,
    TOOL,
    AgentMemory,
    CompressConfig,
    CompressionSession,
    ContractViolation,
    JobStatus,
    SearchResult,
    overlap_ranker,
    rank_filter,
    should_compress,
    stub_distiller,
)


def result(i, relevance_tokens=(), snippet_len=40):
    return SearchResult(f"u{i}", tuple(relevance_tokens), tuple(range(1000, 1000 + snippet_len)), content_tokens=500)


def one_loop(mem, think=50, tool=400, base=0):
    mem.add_think(range(base, base + think))
    mem.add_act(range(base, base + 5))
    mem.add_tool(range(base, base + tool))
    mem.end_loop()


class TestRankFilter:
    def test_all_relevant_keeps_everything_in_order(self):
        rs = [result(i) for i in range(5)]
        kept = rank_filter(rs, [1], lambda q, r: 1.0, CompressConfig(theta_search=0.3))
        assert [r.url for r in kept] == [r.url for r in rs]

    def test_threshold_one_drops_imperfect_results(self):
        rs = [result(i) for i in range(5)]
        assert rank_filter(rs, [1], lambda q, r: 0.99, CompressConfig(theta_search=1.0)) == []

    def test_filtering_cuts_tool_tokens(self):
        query = [1, 2, 3, 4]
        rs = [result(i, query if i < 6 else (9,)) for i in range(10)]
        kept = rank_filter(rs, query, overlap_ranker, CompressConfig(theta_search=0.3))
        before = sum(r.content_tokens for r in rs)
        after = sum(r.content_tokens for r in kept)
        assert len(kept) == 6 and after <= 0.8 * before
        assert all(r.relevance is not None for r in rs)

    def test_best_first(self):
        rs = [result(0, (1,)), result(1, (1, 2)), result(2, (1, 2, 3))]
        kept = rank_filter(rs, [1, 2, 3], overlap_ranker, CompressConfig(theta_search=0.0))
        assert [r.url for r in kept] == ["u2", "u1", "u0"]

    def test_overlap_ranker_empty_query(self):
        assert overlap_ranker([], result(0, (1,))) == 0.0


class TestTrigger:
    def test_threshold_and_boundary(self):
        cfg = CompressConfig(theta_ctx=5000)
        mem = AgentMemory()
        mem.add_tool(range(4999))
        assert not should_compress(mem, True, cfg)
        mem.add_tool(range(1001))
        assert should_compress(mem, True, cfg)
        assert not should_compress(mem, False, cfg)

    def test_pending_job_blocks_a_second(self):
        mem = AgentMemory()
        one_loop(mem, tool=6000)
        s = CompressionSession(mem, CompressConfig())
        s.submit()
        assert not s.should_compress(True)
        with pytest.raises(ContractViolation):
            s.submit()

    def test_config_validation(self):
        for bad in ({"theta_ctx": 0}, {"theta_search": 1.5}, {"ratio": 0.0}):
            with pytest.raises(ValueError):
                CompressConfig(**bad)


class TestDistillation:
    def test_overlapped_apply_replaces_only_snapshot(self):
        mem = AgentMemory()
        for k in range(3):
            one_loop(mem, base=100 * k)
        s = CompressionSession(mem, CompressConfig(ratio=0.5))
        job = s.submit(now=1.0)
        assert job.loops == (0, 2)
        # the agent keeps going while the job runs
        one_loop(mem, base=900)
        s.run()
        summary = s.apply()
        kinds = [(e.kind, e.loop) for e in mem.entries]
        assert kinds.count((TOOL, 3)) == 1
        assert sum(1 for k, _ in kinds if k == TOOL) == 1
        assert summary.n_tokens == 600
        # summary sits after the last covered step, before loop 3
        i = mem.entries.index(summary)
        assert mem.entries[i - 1].loop == 2 and mem.entries[i + 1].loop == 3
        mem.check()

    def test_reasoning_untouched_and_environment_shrinks(self):
        mem = AgentMemory()
        for k in range(4):
            one_loop(mem, base=10 * k)
        reasoning = mem.reasoning()
        env = mem.environment_tokens
        s = CompressionSession(mem, CompressConfig())
        s.submit()
        s.run()
        s.apply()
        assert mem.reasoning() == reasoning
        assert mem.environment_tokens < env

    def test_mid_loop_apply_is_rejected(self):
        mem = AgentMemory()
        one_loop(mem)
        s = CompressionSession(mem, CompressConfig())
        s.submit()
        s.run()
        with pytest.raises(ContractViolation):
            s.apply(at_boundary=False)

    def test_failed_job_leaves_memory_untouched(self):
        mem = AgentMemory()
        one_loop(mem)
        before = list(mem.entries)

        def broken(snapshot, cfg):
            raise RuntimeError("model down")

        s = CompressionSession(mem, CompressConfig(), broken)
        s.submit()
        assert s.run().status is JobStatus.FAILED
        assert s.apply() is None and mem.entries == before
        s.submit()  # a failed job does not block the next one

    def test_nothing_to_distill(self):
        mem = AgentMemory()
        mem.add_tool([1, 2])
        with pytest.raises(ContractViolation):
            CompressionSession(mem, CompressConfig()).submit()

    def test_stub_distiller_ratio(self):
        mem = AgentMemory()
        mem.add_tool(range(7))
        mem.end_loop()
        assert stub_distiller(mem.environment(), CompressConfig(ratio=0.5)) == [0, 1, 3, 5]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 60), st.integers(0, 300)), min_size=1, max_size=12), st.floats(0.1, 0.9))
def test_apply_preserves_reasoning_and_shrinks_environment(loops, ratio):
    mem = AgentMemory()
    for k, (think, tool) in enumerate(loops):
        one_loop(mem, think, tool, base=1000 * k)
    reasoning = [e.tokens for e in mem.reasoning()]
    env = mem.environment_tokens
    s = CompressionSession(mem, CompressConfig(ratio=ratio))
    if not any(tool for _, tool in loops):
        return
    s.submit()
    s.run()
    s.apply()
    assert [e.tokens for e in mem.reasoning()] == reasoning
    assert mem.environment_tokens <= env
    assert sum(1 for e in mem.entries if e.kind == SUMMARY) == 1
    mem.check()

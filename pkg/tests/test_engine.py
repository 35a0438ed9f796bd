import pytest
import simpy

from agentinfer.kvcache import ContractViolation
from agentinfer.sched import Scheduler
from agentinfer.sim.engine import EngineConfig, LLMRequest, ServingEngine, SpecSettings
from agentinfer.sim.latency import LatencyModel
from agentinfer.sim.oracle import MockOracle
from agentinfer.specdec import SpecConfig, StopRule, greedy_decode

LAT = LatencyModel()


def serve(requests, spec=None, cfg=None, policy="fcfs", at=None):
    env = simpy.Environment()
    eng = ServingEngine(env, "t", LAT, cfg or EngineConfig(total_blocks=4096), Scheduler(policy), spec)
    at = at or [0.0] * len(requests)

    def feed():
        for t, r in sorted(zip(at, requests), key=lambda x: x[0]):
            if t > env.now:
                yield env.timeout(t - env.now)
            eng.submit(r)

    env.process(feed())
    env.run()
    return eng, {rec.request_id: rec for rec in eng.records}


def req(rid, prompt, n, seed=1, rho=0.0):
    return LLMRequest(rid, list(prompt), n, MockOracle(seed, 50, rho))


class TestTiming:
    def test_single_request_by_hand(self):
        _, recs = serve([req("a", range(100), 3)])
        r = recs["a"]
        prefill = LAT.decode_per_forward_pass + 100 * LAT.prefill_per_uncached_token
        d1 = LAT.decode_per_forward_pass + 101 * LAT.decode_per_context_token
        d2 = LAT.decode_per_forward_pass + 102 * LAT.decode_per_context_token
        assert r.ttft == pytest.approx(prefill)
        assert r.e2e == pytest.approx(prefill + d1 + d2)
        assert r.tpot == pytest.approx((d1 + d2) / 2)

    def test_chunked_prefill(self):
        _, recs = serve([req("a", range(300), 1)], cfg=EngineConfig(prefill_chunk=100, total_blocks=64))
        step = LAT.decode_per_forward_pass + 100 * LAT.prefill_per_uncached_token
        assert recs["a"].ttft == pytest.approx(3 * step)

    def test_cached_prefix_skips_prefill(self):
        p = list(range(320))
        _, recs = serve([req("a", p, 1), req("b", p + [7], 1)], at=[0.0, 1.0])
        assert recs["b"].hit_blocks == 20
        assert recs["b"].ttft < recs["a"].ttft

    def test_ttft_never_exceeds_e2e(self):
        rs = [req(f"r{i}", range(i * 50, i * 50 + 40 + 30 * i), 5 + i, seed=i) for i in range(8)]
        _, recs = serve(rs, cfg=EngineConfig(max_batch=3, total_blocks=64))
        assert len(recs) == 8
        for rec in recs.values():
            assert 0 <= rec.ttft <= rec.e2e
            assert rec.output_tok == 5 + int(rec.request_id[1:])


class TestBlocks:
    def test_oversized_request_is_a_contract_violation(self):
        with pytest.raises(ContractViolation):
            serve([req("a", range(1000), 10)], cfg=EngineConfig(total_blocks=8))

    def test_pool_is_shared_not_overcommitted(self):
        rs = [req(f"r{i}", range(1000 * i, 1000 * i + 100), 20, seed=i) for i in range(6)]
        eng, recs = serve(rs, cfg=EngineConfig(total_blocks=16))
        assert len(recs) == 6
        eng.pool.check()
        assert eng.pool.pinned_blocks == 0


class TestSpeculation:
    @pytest.mark.parametrize("build", ["sync", "async"])
    def test_outputs_equal_plain_greedy(self, build):
        unit = list(range(40))
        prompts = [unit * 20, unit * 5 + [3, 9], list(range(100, 400))]
        rs = [req(f"r{i}", p, 60, seed=i, rho=0.9) for i, p in enumerate(prompts)]
        spec = SpecSettings(build, SpecConfig(n_propose=4))
        _, recs = serve(rs, spec=spec)
        for i, p in enumerate(prompts):
            expect = greedy_decode(MockOracle(i, 50, 0.9), p, StopRule(60))
            assert rs[i].output == expect
        assert recs["r0"].metrics.accepted_spec_tokens > 0

    def test_sync_build_delays_first_token(self):
        prompt = list(range(40)) * 200
        ttft = {}
        for build in ("none", "sync", "async"):
            _, recs = serve([req("a", prompt, 30, rho=0.9)], spec=SpecSettings(build))
            ttft[build] = recs["a"].ttft
        build_time = len(prompt) * LAT.sam_build_per_token
        assert ttft["sync"] == pytest.approx(ttft["none"] + build_time + LAT.sam_check_overhead)
        assert ttft["async"] == pytest.approx(ttft["none"] + LAT.sam_check_overhead)

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            SpecSettings("later")
        with pytest.raises(ValueError):
            EngineConfig(max_batch=0)

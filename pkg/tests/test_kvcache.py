import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentinfer.kvcache import (
    BlockPool,
    ContractViolation,
    PoolStats,
    PrefixHasher,
    admit,
    block_hashes,
    footprint,
    hit_rate,
    release,
)


def toks(n, base=0):
    return list(range(base, base + n))


class TestFootprint:
    def test_cold_pool(self):
        fp = footprint(BlockPool(16, 16), toks(64))
        assert (fp.hit, fp.need, fp.prompt_tok) == (0, 4, 64)

    def test_cached_prompt_needs_only_partial_tail(self):
        pool = BlockPool(16, 16)
        p = toks(70)
        admit(pool, "a", p)
        release(pool, "a")
        fp = footprint(pool, p)
        assert (fp.hit, fp.need) == (4, 1)
        q = toks(64)
        admit(pool, "b", q)
        release(pool, "b")
        assert footprint(pool, q).need == 0

    def test_shared_prefix(self):
        pool = BlockPool(16, 16)
        admit(pool, "a", toks(32))
        release(pool, "a")
        fp = footprint(pool, toks(32) + toks(32, 1000))
        assert (fp.hit, fp.need) == (2, 2)

    def test_hit_requires_whole_chain(self):
        pool = BlockPool(16, 16)
        admit(pool, "a", toks(32))
        release(pool, "a")
        # same second block content after a different first block is not a hit
        fp = footprint(pool, toks(16, 500) + toks(16, 16))
        assert fp.hit == 0

    def test_incremental_hashing_matches_batch(self):
        h = PrefixHasher(4)
        h.update(toks(6))
        h.update(toks(13))
        assert h.hashes == block_hashes(toks(13), 4)


class TestAdmission:
    def test_admit_pins_and_release_caches(self):
        pool = BlockPool(8, 4)
        a = admit(pool, "a", toks(16))
        assert a is not None and pool.pinned_blocks == 4
        release(pool, "a")
        assert pool.pinned_blocks == 0 and pool.evictable_blocks == 4
        pool.check()

    def test_rejection_leaves_pool_untouched(self):
        pool = BlockPool(4, 4)
        admit(pool, "a", toks(12))
        before = (pool.free_blocks, pool.evictable_blocks, pool.pinned_blocks)
        assert admit(pool, "b", toks(12, 100)) is None
        assert (pool.free_blocks, pool.evictable_blocks, pool.pinned_blocks) == before
        assert pool.stats.rejections == 1

    def test_lru_eviction_prefers_oldest(self):
        pool = BlockPool(4, 4)
        admit(pool, "old", toks(8), now=1.0)
        release(pool, "old", now=1.0)
        admit(pool, "new", toks(8, 100), now=2.0)
        release(pool, "new", now=2.0)
        admit(pool, "x", toks(8, 200), now=3.0)
        assert footprint(pool, toks(8)).hit == 0
        assert footprint(pool, toks(8, 100)).hit == 2
        assert pool.stats.evictions == 2

    def test_pinned_prefix_is_shared_not_evicted(self):
        pool = BlockPool(4, 4)
        admit(pool, "a", toks(8))
        release(pool, "a")
        b = admit(pool, "b", toks(8) + toks(8, 50))
        assert b is not None and b.hit == 2 and b.need == 2
        assert pool.free_blocks == 0 and pool.evictable_blocks == 0
        assert admit(pool, "c", toks(4, 900)) is None

    def test_idle_hits_do_not_double_count(self):
        pool = BlockPool(4, 4)
        admit(pool, "a", toks(12))
        release(pool, "a")
        # 3 cached blocks are both the hit and the only evictable room
        fp = pool.footprint(toks(12) + toks(8, 70))
        assert fp.hit == 3 and fp.need == 2
        assert not pool.can_admit(fp, pool.hashes_for(toks(12) + toks(8, 70)))

    def test_contract_violations(self):
        pool = BlockPool(4, 4)
        admit(pool, "a", toks(4))
        with pytest.raises(ContractViolation):
            admit(pool, "a", toks(4))
        release(pool, "a")
        with pytest.raises(ContractViolation):
            release(pool, "a")
        with pytest.raises(ValueError):
            BlockPool(0)

    def test_release_registers_output_hashes(self):
        pool = BlockPool(8, 4)
        prompt, out = toks(8), toks(8, 40)
        hashes = pool.hashes_for(prompt)
        pool.admit("a", pool.footprint(len(prompt), hashes), hashes, extra_blocks=2)
        pool.release("a", pool.hashes_for(prompt + out))
        assert footprint(pool, prompt + out).hit == 4

    def test_prewarm(self):
        pool = BlockPool(4, 4)
        assert pool.prewarm(pool.hashes_for(toks(12))) == 3
        assert footprint(pool, toks(12)).hit == 3
        # a different chain may evict older cache but never its own head
        assert pool.prewarm(pool.hashes_for(toks(20, 500))) == 4
        assert footprint(pool, toks(20, 500)).hit == 4
        assert footprint(pool, toks(12)).hit == 0
        pool.check()


class TestHitRate:
    def test_formula(self):
        assert hit_rate(PoolStats(admissions=2, hit_blocks=3, need_blocks=1)) == 0.75
        with pytest.raises(ZeroDivisionError):
            hit_rate(PoolStats())


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5), st.integers(1, 40)), max_size=60))
def test_random_admit_release_keeps_accounting(ops):
    pool = BlockPool(12, 4)
    live = []
    prefixes = [toks(16, 1000 * k) for k in range(6)]
    for i, (do_admit, which, length) in enumerate(ops):
        if do_admit or not live:
            rid = f"r{i}"
            prompt = prefixes[which] + toks(length, 10_000 + i * 100)
            fp = pool.footprint(prompt)
            free_before = pool.available_blocks
            if admit(pool, rid, prompt, now=float(i)) is not None:
                live.append(rid)
                # new blocks plus cached hits that were idle and are now pinned
                assert fp.need <= free_before - pool.available_blocks <= fp.need + fp.hit
            else:
                assert fp.need > 0
        else:
            release(pool, live.pop(0), now=float(i))
        pool.check()
        assert pool.pinned_blocks + pool.evictable_blocks + pool.free_blocks == pool.total_blocks
    s = pool.stats
    assert s.admissions >= len(live)

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentinfer.sched import (
    QueueEntry,
    Scheduler,
    SchedulerParams,
    SchedulerState,
    baseline_fcfs,
    baseline_sjf,
    rank_agentsched,
    rank_sjf,
    score,
    select,
    update_lambda,
)


def entry(i, prompt_tok=160, hit=0, need=10, wait=0.0):
    return QueueEntry(f"r{i}", prompt_tok, hit, need, wait, i)


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


entries = st.builds(
    lambda i, p, h, n, w: entry(i, p, h, n, w),
    st.integers(0, 10_000),
    st.integers(1, 5000),
    st.integers(0, 300),
    st.integers(0, 300),
    st.floats(0, 120),
)


def unique_ids(q):
    return [QueueEntry(f"r{k}", e.prompt_tok, e.hit, e.need, e.wait, k) for k, e in enumerate(q)]


class TestLambda:
    def test_worked_example(self):
        p = SchedulerParams(lambda_max=2.0, k=4.0, epsilon=1.0)
        q = [entry(0, hit=25, need=70), entry(1, hit=15, need=50)]
        lam = update_lambda(SchedulerState(), q, 100, p)
        z = 120 / 61
        assert lam == pytest.approx(2.0 * logistic(4.0 * (z - 1.0)), abs=1e-12)
        # the logistic evaluates to 1.95909
        assert lam == pytest.approx(1.9589, abs=5e-4)

    def test_midpoint(self):
        p = SchedulerParams()
        lam = update_lambda(SchedulerState(), [entry(0, hit=40, need=61)], 100, p)
        assert abs(lam - 0.5 * p.lambda_max) <= 1e-12

    def test_empty_queue(self):
        p = SchedulerParams(k=4.0)
        lam = update_lambda(SchedulerState(), [], 100, p)
        assert lam == pytest.approx(p.lambda_max * logistic(-4.0))

    def test_state_updated(self):
        s = SchedulerState()
        lam = update_lambda(s, [entry(0, hit=5, need=7)], 20, SchedulerParams())
        assert s.lam == lam and s.last_demand == 7 and s.last_capacity == 15

    @given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
    def test_range_and_monotonicity(self, demand, usable, extra):
        p = SchedulerParams()
        lo = update_lambda(SchedulerState(), [entry(0, hit=0, need=demand)], usable, p)
        hi = update_lambda(SchedulerState(), [entry(0, hit=0, need=demand + 1 + extra)], usable, p)
        more_room = update_lambda(SchedulerState(), [entry(0, hit=0, need=demand)], usable + 1 + extra, p)
        assert 0.0 <= lo <= p.lambda_max
        assert hi >= lo and more_room <= lo

    def test_strict_on_a_grid(self):
        p = SchedulerParams()
        grid = [update_lambda(SchedulerState(), [entry(0, need=d)], 100, p) for d in range(1, 101)]
        assert all(b > a for a, b in zip(grid, grid[1:]))

    def test_params_validation(self):
        for bad in ({"lambda_max": 0}, {"k": 0}, {"epsilon": 0}, {"tpb": 0}, {"a": -1}):
            with pytest.raises(ValueError):
                SchedulerParams(**bad)


class TestScore:
    def test_worked_example(self):
        p = SchedulerParams(lambda_max=2.0, a=1.0, b=0.5, c=0.2, tpb=16)
        e = entry(0, prompt_tok=160, hit=8, need=2, wait=3.0)
        assert score(e, 1.0, p) == pytest.approx(-0.4)

    def test_pure_sjf_at_zero_price(self):
        p = SchedulerParams(a=0.0, c=0.0, b=0.5, tpb=16)
        assert score(entry(0, prompt_tok=320), 0.0, p) == pytest.approx(-0.5 * 20)

    def test_fully_cache_aware_at_max_price(self):
        p = SchedulerParams(a=0.0, c=0.0, b=0.5, lambda_max=2.0)
        assert score(entry(0, prompt_tok=3200, need=3), 2.0, p) == pytest.approx(-(0.5 + 2.0) * 3)

    @given(st.integers(0, 100), st.integers(0, 100), st.integers(0, 50), st.integers(1, 4000))
    def test_hit_wins_at_max_price(self, h1, h2, need, prompt):
        p = SchedulerParams()
        if h1 == h2:
            return
        a, b = entry(0, prompt, h1, need, 1.0), entry(1, prompt, h2, need, 1.0)
        assert (score(a, p.lambda_max, p) > score(b, p.lambda_max, p)) == (h1 > h2)

    def test_wait_term_eventually_dominates(self):
        p = SchedulerParams(c=0.05)
        small = entry(1, prompt_tok=16, need=1, hit=5)
        fixed = score(small, 1.0, p)
        w = 0.0
        while score(QueueEntry("r0", 16_000, 0, 1000, w, 0), 1.0, p) <= fixed:
            w += 100.0
        assert w < 1e6


class TestBaselines:
    def test_fcfs_and_sjf(self):
        a = entry(0, prompt_tok=10_000)
        b = entry(1, prompt_tok=1_000)
        assert baseline_fcfs([b, a]) == "r0"
        assert baseline_sjf([a, b]) == "r1"

    def test_sjf_ties_by_arrival(self):
        assert baseline_sjf([entry(3, 100), entry(2, 100)]) == "r2"

    def test_feasibility_applies_to_all(self):
        q = [entry(0, 100), entry(1, 50), entry(2, 500)]
        feasible = lambda e: e.request_id != "r1"  # noqa: E731
        assert baseline_fcfs(q, feasible) == "r0"
        assert baseline_sjf(q, feasible) == "r0"
        assert select(q, SchedulerState(), SchedulerParams(), feasible) in {"r0", "r2"}
        assert baseline_fcfs(q, lambda e: False) is None
        assert baseline_sjf([]) is None

    @settings(max_examples=200)
    @given(st.lists(entries, min_size=1, max_size=15))
    def test_sjf_limit(self, q):
        q = unique_ids(q)
        p = SchedulerParams(a=0.0, c=0.0)
        assert [e.request_id for e in rank_agentsched(q, 0.0, p)] == [e.request_id for e in rank_sjf(q)]

    @given(st.lists(entries, min_size=1, max_size=10), st.floats(0, 2))
    def test_never_selects_infeasible(self, q, lam):
        q = unique_ids(q)
        feasible = lambda e: e.need % 2 == 0  # noqa: E731
        picked = select(q, SchedulerState(lam=lam), SchedulerParams(), feasible)
        if picked is None:
            assert not any(feasible(e) for e in q)
        else:
            assert feasible(next(e for e in q if e.request_id == picked))


class TestScheduler:
    def test_policies(self):
        q = [entry(0, 1000, hit=0, need=60), entry(1, 100, hit=0, need=7)]
        always = lambda e: True  # noqa: E731
        assert Scheduler("fcfs").pick(q, always) == "r0"
        assert Scheduler("sjf").pick(q, always) == "r1"
        s = Scheduler("agentsched")
        s.refresh(q, 1000)
        assert s.pick(q, always) == "r1"
        with pytest.raises(ValueError):
            Scheduler("lifo")

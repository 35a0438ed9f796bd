import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentinfer.collab import (
    CollabConfig,
    EscalationController,
    Mode,
    ProgressParseError,
    StepKind,
    TruncatedRun,
    format_progress,
    parse_progress,
    run_collab,
)


class Scripted:
    def __init__(self, role, reports, final_after=None):
        self.role = role
        self.reports = reports
        self.final_after = final_after
        self.calls = 0

    def think(self, ctx):
        self.calls += 1
        return f"{self.role.value}-think"

    def think_and_tools(self, ctx):
        self.calls += 1
        return f"{self.role.value}-act"

    def progress_check(self, ctx):
        r = self.reports(self.calls)
        return format_progress(r) if isinstance(r, bool) else r

    def is_final(self, ctx):
        return self.final_after is not None and len(ctx) > self.final_after


def always(v):
    return lambda _: v


def block(value_text):
    return f"===PROGRESS===\n<reason> r </reason>\n<value>{value_text}</value>\n===END_PROGRESS==="


class TestParse:
    def test_values(self):
        assert parse_progress(block(" TRUE ")).value is True
        assert parse_progress("noise " + block("FALSE") + " tail").value is False
        assert parse_progress(format_progress(True, "found it")).reason == "found it"

    @pytest.mark.parametrize("text", [block(" maybe "), block("true"), "no block here", "===PROGRESS===<value>TRUE</value>===END_PROGRESS==="])
    def test_malformed(self, text):
        with pytest.raises(ProgressParseError):
            parse_progress(text)


def modes(trace):
    return [e.mode for e in trace.events]


class TestProtocol:
    def test_steady_small_model_never_escalates(self):
        cfg = CollabConfig(K_L=2, B_L=2)
        _, t = run_collab("q", Scripted(Mode.LARGE, always(False)), Scripted(Mode.SMALL, always(True), final_after=7), cfg)
        assert t.large_steps == 2 and t.escalations == 0 and t.small_steps == 5
        assert [e.kind for e in t.events[:2]] == [StepKind.THINK] * 2
        assert all(e.kind is StepKind.THINK_AND_TOOLS for e in t.events[2:])

    def test_no_progress_alternates_with_bounded_bursts(self):
        K, B = 2, 3
        cfg = CollabConfig(K_L=K, B_L=B, max_total_steps=K + 3 * (1 + B))
        with pytest.raises(TruncatedRun) as exc:
            run_collab("q", Scripted(Mode.LARGE, always(False)), Scripted(Mode.SMALL, always(False)), cfg)
        t = exc.value.trace
        expected = [Mode.LARGE] * K + ([Mode.SMALL] + [Mode.LARGE] * B) * 3
        assert modes(t) == expected
        assert t.bursts == [B, B, B] and t.escalations == 3

    def test_final_answer_in_planning_skips_small_model(self):
        _, t = run_collab("q", Scripted(Mode.LARGE, always(True), final_after=1), Scripted(Mode.SMALL, always(True)), CollabConfig(K_L=3))
        assert t.small_steps == 0 and t.large_steps == 1

    def test_large_progress_hands_back_after_one_step(self):
        small = Scripted(Mode.SMALL, lambda n: n != 2, final_after=8)
        _, t = run_collab("q", Scripted(Mode.LARGE, always(True)), small, CollabConfig(K_L=1, B_L=4))
        assert t.bursts == [1] and t.de_escalations == 1

    def test_malformed_report_escalates(self):
        small = Scripted(Mode.SMALL, lambda n: block("maybe") if n == 1 else True, final_after=6)
        _, t = run_collab("q", Scripted(Mode.LARGE, always(True)), small, CollabConfig(K_L=1, B_L=1))
        assert t.malformed == 1 and t.escalations == 1
        assert t.events[1].malformed and not t.events[1].progress

    def test_zero_planning_budget_starts_small(self):
        ctl = EscalationController(CollabConfig(K_L=0))
        assert ctl.next_step() == (Mode.SMALL, StepKind.THINK_AND_TOOLS)

    def test_config_validation(self):
        for bad in ({"K_L": -1}, {"B_L": 0}, {"max_total_steps": 0}):
            with pytest.raises(ValueError):
                CollabConfig(**bad)
        with pytest.raises(ValueError):
            run_collab("q", None, Scripted(Mode.SMALL, always(True)), CollabConfig())


@given(st.integers(0, 4), st.integers(1, 4), st.lists(st.booleans(), min_size=1, max_size=60))
def test_budgets_hold_for_any_report_sequence(K, B, reports):
    ctl = EscalationController(CollabConfig(K_L=K, B_L=B))
    for r in reports:
        if not ctl.wants_step(False):
            break
        ctl.record(r, final=False)
    t = ctl.trace
    planning = min(K, len(t.events))
    assert all(e.mode is Mode.LARGE for e in t.events[:planning])
    assert all(1 <= b <= B for b in t.bursts[:-1]) and all(b <= B for b in t.bursts)
    assert t.escalations == sum(1 for e in t.events[planning:] if e.mode is Mode.SMALL and not e.progress)

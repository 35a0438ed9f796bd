"""Dual-model escalation controller driven by self-reported progress.

The large model plans for up to ``K_L`` think steps, then the small model
takes over. Whenever the active small model reports no progress the session
escalates to the large model, which keeps control until it reports progress
again or has used ``B_L`` consecutive steps.

The control logic lives in :class:`EscalationController` so that both the
synchronous :func:`run_collab` loop and the event-driven simulator can drive
it.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

logger = logging.getLogger(__name__)

BEGIN_MARKER = "===PROGRESS==="
END_MARKER = "===END_PROGRESS==="

_BLOCK_RE = re.compile(re.escape(BEGIN_MARKER) + r"(.*?)" + re.escape(END_MARKER), re.DOTALL)
_REASON_RE = re.compile(r"<reason>(.*?)</reason>", re.DOTALL)
_VALUE_RE = re.compile(r"<value>(.*?)</value>", re.DOTALL)


class ProgressParseError(ValueError):
    def __init__(self, message: str, fragment: str) -> None:
        super().__init__(f"{message}: {fragment!r}")
        self.fragment = fragment


@dataclass(frozen=True)
class ProgressBlock:
    reason: str
    value: bool


def parse_progress(text: str) -> ProgressBlock:
    """Parse the first PROGRESS block in ``text``.

    The value must read exactly ``TRUE`` or ``FALSE`` (surrounding whitespace
    allowed, case-sensitive).
    """
    m = _BLOCK_RE.search(text)
    if m is None:
        raise ProgressParseError("no PROGRESS block found", text[:200])
    body = m.group(1)
    reason = _REASON_RE.search(body)
    if reason is None:
        raise ProgressParseError("missing <reason> tag", body)
    value = _VALUE_RE.search(body)
    if value is None:
        raise ProgressParseError("missing <value> tag", body)
    raw = value.group(1).strip()
    if raw not in ("TRUE", "FALSE"):
        raise ProgressParseError("value must be TRUE or FALSE", value.group(0))
    return ProgressBlock(reason.group(1).strip(), raw == "TRUE")


def format_progress(value: bool, reason: str = "") -> str:
    return (
        f"{BEGIN_MARKER}\n<reason> {reason} </reason>\n"
        f"<value> {'TRUE' if value else 'FALSE'} </value>\n{END_MARKER}"
    )


class Mode(str, Enum):
    LARGE = "LARGE"
    SMALL = "SMALL"


class StepKind(str, Enum):
    THINK = "think"
    THINK_AND_TOOLS = "think_and_tools"


class ModelAdapter(Protocol):
    role: Mode

    def think(self, ctx: list[Any]) -> Any: ...

    def think_and_tools(self, ctx: list[Any]) -> Any: ...

    def progress_check(self, ctx: list[Any]) -> str: ...

    def is_final(self, ctx: list[Any]) -> bool: ...


@dataclass
class CollabConfig:
    K_L: int = 2
    B_L: int = 2
    max_total_steps: int = 64

    def __post_init__(self) -> None:
        if self.K_L < 0 or self.B_L < 1 or self.max_total_steps < 1:
            raise ValueError("need K_L >= 0, B_L >= 1, max_total_steps >= 1")


@dataclass(frozen=True)
class TraceEvent:
    mode: Mode
    kind: StepKind
    progress: bool
    malformed: bool = False


@dataclass
class CollabTrace:
    events: list[TraceEvent] = field(default_factory=list)
    large_steps: int = 0
    small_steps: int = 0
    escalations: int = 0
    de_escalations: int = 0
    malformed: int = 0
    bursts: list[int] = field(default_factory=list)


def progress_policy_on_malformed(mode: Mode) -> bool:
    """Malformed progress counts as no progress, in either mode."""
    return False


class TruncatedRun(RuntimeError):
    def __init__(self, trace: CollabTrace) -> None:
        super().__init__(f"collaboration exceeded step guardrail after {len(trace.events)} steps")
        self.trace = trace


class EscalationController:
    """State machine of the escalation protocol.

    Usage: ask :meth:`next_step` which model acts and how, run that step and
    its progress check, then call :meth:`record`. :attr:`done` turns true on
    an early exit; the caller additionally stops phase two whenever the
    context already holds a final answer (:meth:`wants_step`).
    """

    def __init__(self, cfg: CollabConfig) -> None:
        self.cfg = cfg
        self.mode = Mode.LARGE
        self.phase = 1 if cfg.K_L > 0 else 2
        if self.phase == 2:
            self.mode = Mode.SMALL
        self.large_steps_used = 0
        self.done = False
        self.trace = CollabTrace()

    def wants_step(self, final: bool) -> bool:
        if self.done:
            return False
        if self.phase == 2 and final:
            self.done = True
            return False
        return True

    def next_step(self) -> tuple[Mode, StepKind]:
        if self.phase == 1:
            return Mode.LARGE, StepKind.THINK
        return self.mode, StepKind.THINK_AND_TOOLS

    def record(self, progress: bool | None, final: bool) -> None:
        """Apply one step's outcome; ``progress=None`` marks a malformed block."""
        malformed = progress is None
        if malformed:
            progress = progress_policy_on_malformed(self.mode)
            self.trace.malformed += 1
        mode, kind = self.next_step()
        t = self.trace
        t.events.append(TraceEvent(mode, kind, progress, malformed))
        if mode is Mode.LARGE:
            t.large_steps += 1
        else:
            t.small_steps += 1

        if self.phase == 1:
            self.large_steps_used += 1
            if progress and final:
                self.done = True
                return
            if self.large_steps_used >= self.cfg.K_L:
                self.phase, self.mode = 2, Mode.SMALL
            return

        if self.mode is Mode.SMALL:
            if not progress:
                self.mode = Mode.LARGE
                self.large_steps_used = 0
                t.escalations += 1
                t.bursts.append(0)
            return

        self.large_steps_used += 1
        t.bursts[-1] += 1
        if progress:
            if final:
                self.done = True
                return
            self.mode = Mode.SMALL
            t.de_escalations += 1
        elif self.large_steps_used >= self.cfg.B_L:
            self.mode = Mode.SMALL
            t.de_escalations += 1


def _check(adapter: ModelAdapter, ctx: list[Any]) -> bool | None:
    raw = adapter.progress_check(ctx)
    try:
        return parse_progress(raw).value
    except ProgressParseError as exc:
        logger.info("malformed progress block from %s model: %s", adapter.role, exc)
        return None


def extract_answer(ctx: list[Any]) -> Any:
    return ctx[-1] if ctx else None


def run_collab(query: Any, M_L: ModelAdapter, M_S: ModelAdapter, cfg: CollabConfig) -> tuple[Any, CollabTrace]:
    """Run the escalation protocol with synchronous adapters.

    Raises:
        TruncatedRun: more than ``cfg.max_total_steps`` think steps; carries
            the partial trace.
    """
    if M_L is None or M_S is None:
        raise ValueError("both adapters are required")
    ctx: list[Any] = [query]
    ctl = EscalationController(cfg)
    adapters = {Mode.LARGE: M_L, Mode.SMALL: M_S}
    while True:
        final = adapters[ctl.mode].is_final(ctx) if ctl.phase == 2 else False
        if not ctl.wants_step(final):
            break
        if len(ctl.trace.events) >= cfg.max_total_steps:
            raise TruncatedRun(ctl.trace)
        mode, kind = ctl.next_step()
        model = adapters[mode]
        out = model.think(ctx) if kind is StepKind.THINK else model.think_and_tools(ctx)
        ctx.append(out)
        progress = _check(model, ctx)
        ctl.record(progress, final=model.is_final(ctx))
    return extract_answer(ctx), ctl.trace

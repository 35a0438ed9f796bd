"""Metrics collected from a simulation run, serialised as JSON and CSV."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..kvcache import PoolStats
from ..specdec import DecodeMetrics
from .agent import SessionResult
from .engine import RequestRecord, ServingEngine

CSV_COLUMNS = ("request_id", "class", "arrival", "ttft", "tpot", "e2e", "hit_blocks", "need_blocks", "ote", "shr")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _mean(xs: Sequence[float]) -> float:
    return statistics.fmean(xs) if xs else 0.0


def _changes(rows: list[tuple]) -> list[tuple]:
    """Keep only rows whose values (apart from the timestamp) differ from the previous row."""
    out: list[tuple] = []
    for r in rows:
        if not out or out[-1][1:] != r[1:]:
            out.append(r)
    return out


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    records: list[RequestRecord] = field(default_factory=list)
    sessions: list[SessionResult] = field(default_factory=list)
    lambda_series: list[tuple[float, float]] = field(default_factory=list)
    queue_series: list[tuple[float, int, int, int]] = field(default_factory=list)
    admissions: list[tuple[float, str, float]] = field(default_factory=list)
    pool: PoolStats = field(default_factory=PoolStats)
    extras: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def collect(
        cls,
        scenario: str,
        seed: int,
        engines: Sequence[ServingEngine],
        sessions: Sequence[SessionResult] = (),
    ) -> MetricsReport:
        rep = cls(scenario, seed, sessions=list(sessions))
        for e in engines:
            rep.records.extend(e.records)
            for k in ("admissions", "hit_blocks", "need_blocks", "evictions", "rejections"):
                setattr(rep.pool, k, getattr(rep.pool, k) + getattr(e.pool.stats, k))
        rep.records.sort(key=lambda r: (r.arrival, r.request_id))
        main = engines[0]
        rep.lambda_series = _changes([(s.time, s.lam) for s in main.samples])
        rep.queue_series = _changes([(s.time, s.waiting, s.running_long, s.running_short) for s in main.samples])
        rep.admissions = [(a.time, a.klass, a.lam) for a in main.admissions]
        return rep

    # -- aggregates -----------------------------------------------------------

    @property
    def makespan(self) -> float:
        if self.sessions:
            return max(s.end for s in self.sessions) - min(s.start for s in self.sessions)
        if not self.records:
            return 0.0
        return max(r.finished for r in self.records) - min(r.arrival for r in self.records)

    @property
    def qps(self) -> float:
        """Completed queries (agent sessions, or bare requests) per simulated second."""
        n = len(self.sessions) if self.sessions else len(self.records)
        span = self.makespan
        return n / span if span > 0 else 0.0

    @property
    def hit_rate(self) -> float:
        total = self.pool.hit_blocks + self.pool.need_blocks
        return self.pool.hit_blocks / total if total else 0.0

    @property
    def decode(self) -> DecodeMetrics:
        m = DecodeMetrics()
        for r in self.records:
            m = m.merge(r.metrics)
        return m

    @property
    def ote(self) -> float:
        m = self.decode
        return m.generated_tokens / m.forward_passes if m.forward_passes else 0.0

    @property
    def shr(self) -> float:
        m = self.decode
        return m.accepted_spec_tokens / m.proposed_spec_tokens if m.proposed_spec_tokens else 0.0

    def mean(self, metric: str, klass: str | None = None) -> float:
        return _mean([getattr(r, metric) for r in self.records if klass is None or r.klass == klass])

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "requests": len(self.records),
            "makespan": self.makespan,
            "qps": self.qps,
            "hit_rate": self.hit_rate,
            "ote": self.ote,
            "shr": self.shr,
            "mean_ttft": self.mean("ttft"),
            "mean_tpot": self.mean("tpot"),
            "mean_e2e": self.mean("e2e"),
            "mean_e2e_long": self.mean("e2e", "long"),
            "mean_e2e_short": self.mean("e2e", "short"),
            "evictions": self.pool.evictions,
        }
        if self.sessions:
            out["sessions"] = len(self.sessions)
            out["mean_session_e2e"] = _mean([s.e2e for s in self.sessions])
            large = sum(s.large_steps for s in self.sessions)
            small = sum(s.small_steps for s in self.sessions)
            out["large_step_share"] = large / (large + small) if large + small else 0.0
            out["escalations"] = sum(s.escalations for s in self.sessions)
            out["peak_context"] = max(s.peak_context for s in self.sessions)
            out["applies"] = sum(s.applies for s in self.sessions)
            out["applies_mid_loop"] = sum(s.applies_mid_loop for s in self.sessions)
            out["stall_events"] = sum(s.stall_events for s in self.sessions)
            out["reasoning_preserved"] = all(s.reasoning_preserved for s in self.sessions)
        out.update(self.extras)
        return out

    # -- serialisation --------------------------------------------------------

    def rows(self) -> list[list[str]]:
        out = []
        for r in self.records:
            m = r.metrics
            ote = m.generated_tokens / m.forward_passes if m.forward_passes else 0.0
            shr = _fmt(m.accepted_spec_tokens / m.proposed_spec_tokens) if m.proposed_spec_tokens else ""
            out.append(
                [
                    r.request_id, r.klass, _fmt(r.arrival), _fmt(r.ttft), _fmt(r.tpot), _fmt(r.e2e),
                    str(r.hit_blocks), str(r.need_blocks), _fmt(ote), shr,
                ]
            )
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "summary": self.summary(),
            "lambda_series": [list(x) for x in self.lambda_series],
            "queue_series": [list(x) for x in self.queue_series],
            "sessions": [
                {
                    "session_id": s.session_id,
                    "e2e": s.e2e,
                    "large_steps": s.large_steps,
                    "small_steps": s.small_steps,
                    "escalations": s.escalations,
                    "tool_loops": s.tool_loops,
                    "peak_context": s.peak_context,
                    "applies": s.applies,
                    "truncated": s.truncated,
                }
                for s in self.sessions
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir: str | Path, stem: str) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.json", out / f"{stem}.csv"]
        paths[0].write_text(self.to_json() + "\n")
        paths[1].write_text(self.to_csv())
        return paths
